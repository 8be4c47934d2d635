//! Hierarchical representation assembly and matrix-vector products.
//!
//! Admissible blocks are compressed once at initialisation. Dense leaf blocks
//! are regenerated on every product unless the dense cache is enabled; the
//! time spent generating them is reported separately so benchmarks can
//! charge it to initialisation.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::kernel::{Coords, KernelSpec, PointSet};
use crate::lowrank::{aca_compress, AcaOptions, Deadline, KernelBlock, LowRankBlock};
use crate::octree::{
    build_interaction_lists, AdmissibilityClass, Domain, InteractionLists, Node, Octree, TreeOptions, Variant,
    DEFAULT_DEPTH_CAP, DEFAULT_N_MAX,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HMatrixOptions {
    pub variant: Variant,
    pub n_max: usize,
    pub tolerance: f64,
    pub max_rank: Option<usize>,
    pub depth_cap: usize,
    pub domain: Domain,
    /// Keep dense leaf blocks in memory instead of regenerating them.
    pub cache_dense: bool,
    /// Serve the block `(Y, X)` from the compressed `(X, Y)` block. Valid
    /// because every supported kernel is radial, hence symmetric.
    pub reuse_transpose: bool,
    /// Abort initialisation once this passes.
    pub deadline: Option<Deadline>,
}

impl HMatrixOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            n_max: DEFAULT_N_MAX,
            tolerance: DEFAULT_TOLERANCE,
            max_rank: None,
            depth_cap: DEFAULT_DEPTH_CAP,
            domain: Domain::default(),
            cache_dense: false,
            reuse_transpose: true,
            deadline: None,
        }
    }

    pub fn tolerance(mut self, eps: f64) -> Self {
        self.tolerance = eps;
        self
    }

    pub fn n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub(crate) fn aca(&self) -> AcaOptions {
        AcaOptions {
            tolerance: self.tolerance,
            max_rank: self.max_rank,
            cross_check: false,
            deadline: self.deadline,
        }
    }
}

/// A compressed admissible block, or a reference to the compressed
/// transpose held by the partner node.
#[derive(Clone, Debug, PartialEq)]
pub enum FarBlock {
    Owned(LowRankBlock),
    Transposed { node: usize, slot: usize },
}

/// Where the time of one product went.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MatvecTiming {
    pub total_s: f64,
    /// Generating dense leaf entries.
    pub dense_formation_s: f64,
}

impl MatvecTiming {
    /// Product time with dense-entry generation excluded.
    pub fn product_s(&self) -> f64 {
        (self.total_s - self.dense_formation_s).max(0.0)
    }
}

/// Storage and rank statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepStats {
    pub n: usize,
    pub depth: usize,
    pub lowrank_blocks: usize,
    pub dense_blocks: usize,
    /// `sum r^2` over all ordered low-rank blocks.
    pub lowrank_floats: u64,
    /// `sum |X| |Y|` over dense leaf blocks.
    pub dense_floats: u64,
    /// Pivot indices over all ordered low-rank blocks (`2 r` each).
    pub pivot_ints: u64,
    pub max_rank: usize,
    /// Number of ACA runs performed at initialisation.
    pub aca_calls: usize,
}

impl RepStats {
    pub fn floats(&self) -> u64 {
        self.lowrank_floats + self.dense_floats
    }

    /// Stored floats over `N^2`.
    pub fn compression_ratio(&self) -> f64 {
        self.floats() as f64 / (self.n as f64 * self.n as f64)
    }

    /// 8 bytes per float plus 4 per pivot index.
    pub fn memory_bytes(&self) -> u64 {
        8 * self.floats() + 4 * self.pivot_ints
    }
}

#[derive(Clone, Debug)]
pub struct HMatrix {
    kernel: KernelSpec,
    options: HMatrixOptions,
    tree: Octree,
    lists: InteractionLists,
    /// `far[level][node][slot]`, parallel to `lists.far(level, node)`.
    far: Vec<Vec<Vec<FarBlock>>>,
    /// `dense[leaf][slot]`, parallel to `lists.dense(leaf)`, when cached.
    dense: Option<Vec<Vec<Vec<f64>>>>,
    aca_calls: usize,
    build_s: f64,
    dense_formation_s: f64,
}

/// Builds the tree, the interaction lists and every compressed block.
pub fn initialize(pts: &PointSet, kernel: &KernelSpec, opts: &HMatrixOptions) -> Result<HMatrix> {
    HMatrix::new(pts, kernel, opts)
}

impl HMatrix {
    pub fn new(pts: &PointSet, kernel: &KernelSpec, opts: &HMatrixOptions) -> Result<HMatrix> {
        if opts.tolerance.is_nan() || opts.tolerance <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                opts.tolerance
            )));
        }
        let start = Instant::now();
        let tree = Octree::build(
            pts,
            &TreeOptions {
                n_max: opts.n_max,
                domain: opts.domain,
                depth_cap: opts.depth_cap,
            },
        )?;
        Self::from_tree(tree, kernel, opts, start)
    }

    /// Assembles on a tree built elsewhere, e.g. with a forced depth.
    pub fn with_tree(tree: Octree, kernel: &KernelSpec, opts: &HMatrixOptions) -> Result<HMatrix> {
        Self::from_tree(tree, kernel, opts, Instant::now())
    }

    fn from_tree(tree: Octree, kernel: &KernelSpec, opts: &HMatrixOptions, start: Instant) -> Result<HMatrix> {
        let lists = build_interaction_lists(&tree, opts.variant);
        let aca = opts.aca();
        let coords = tree.coords();
        let mut far = Vec::with_capacity(tree.depth() + 1);
        let mut aca_calls = 0;
        for level in 0..=tree.depth() {
            let nodes = tree.level(level);
            let blocks: Vec<Vec<FarBlock>> = (0..nodes.len())
                .into_par_iter()
                .map(|i| {
                    lists
                        .far(level, i)
                        .iter()
                        .map(|p| {
                            if opts.reuse_transpose && p.node < i {
                                // Filled in below once the owner exists.
                                return Ok(FarBlock::Transposed {
                                    node: p.node,
                                    slot: usize::MAX,
                                });
                            }
                            let e = KernelBlock::new(kernel, coords, nodes[i].range(), nodes[p.node].range());
                            aca_compress(&e, &aca).map(FarBlock::Owned)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let mut blocks = blocks;
            for (i, node_blocks) in blocks.iter_mut().enumerate() {
                for block in node_blocks.iter_mut() {
                    match block {
                        FarBlock::Transposed { node, slot } => {
                            *slot = lists
                                .far(level, *node)
                                .iter()
                                .position(|q| q.node == i)
                                .expect("interaction lists are symmetric");
                        }
                        FarBlock::Owned(_) => aca_calls += 1,
                    }
                }
            }
            far.push(blocks);
        }
        let build_s = start.elapsed().as_secs_f64();
        let mut h = HMatrix {
            kernel: kernel.clone(),
            options: *opts,
            tree,
            lists,
            far,
            dense: None,
            aca_calls,
            build_s,
            dense_formation_s: 0.0,
        };
        if opts.cache_dense {
            let t = Instant::now();
            let leaves = h.tree.leaves();
            let cache = (0..leaves.len())
                .into_par_iter()
                .map(|i| {
                    h.lists
                        .dense(i)
                        .map(|p| {
                            let mut buf = vec![0.0; leaves[i].len() * leaves[p.node].len()];
                            fill_dense(
                                &h.kernel,
                                h.tree.coords(),
                                &leaves[i],
                                &leaves[p.node],
                                p.class,
                                &mut buf,
                            );
                            buf
                        })
                        .collect()
                })
                .collect();
            h.dense = Some(cache);
            h.dense_formation_s = t.elapsed().as_secs_f64();
        }
        Ok(h)
    }

    /// Assembles from blocks compressed elsewhere. `far` must be parallel
    /// to the interaction lists of `tree` for `opts.variant`.
    pub(crate) fn from_parts(
        tree: Octree,
        lists: InteractionLists,
        kernel: &KernelSpec,
        opts: &HMatrixOptions,
        far: Vec<Vec<Vec<FarBlock>>>,
        aca_calls: usize,
        build_s: f64,
    ) -> HMatrix {
        HMatrix {
            kernel: kernel.clone(),
            options: *opts,
            tree,
            lists,
            far,
            dense: None,
            aca_calls,
            build_s,
            dense_formation_s: 0.0,
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn options(&self) -> &HMatrixOptions {
        &self.options
    }

    pub fn variant(&self) -> Variant {
        self.options.variant
    }

    pub fn tree(&self) -> &Octree {
        &self.tree
    }

    pub fn lists(&self) -> &InteractionLists {
        &self.lists
    }

    pub fn n(&self) -> usize {
        self.tree.num_points()
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    /// Wall time of tree, list and ACA construction.
    pub fn build_seconds(&self) -> f64 {
        self.build_s
    }

    /// Time spent filling the dense cache, if enabled.
    pub fn cached_formation_seconds(&self) -> f64 {
        self.dense_formation_s
    }

    pub fn far_blocks(&self, level: usize, node: usize) -> &[FarBlock] {
        &self.far[level][node]
    }

    /// The compressed block serving slot `slot` of `node`, and whether it is
    /// used transposed.
    pub fn resolve(&self, level: usize, node: usize, slot: usize) -> (&LowRankBlock, bool) {
        match &self.far[level][node][slot] {
            FarBlock::Owned(b) => (b, false),
            FarBlock::Transposed { node: owner, slot: s } => match &self.far[level][*owner][*s] {
                FarBlock::Owned(b) => (b, true),
                FarBlock::Transposed { .. } => unreachable!("transposed blocks always point at owners"),
            },
        }
    }

    pub fn rank(&self, level: usize, node: usize, slot: usize) -> usize {
        self.resolve(level, node, slot).0.rank()
    }

    /// `y_node += K~(node, partner) x_partner` for one admissible block.
    pub fn apply_far(&self, level: usize, node: usize, slot: usize, x: &[f64], y_node: &mut [f64]) {
        let nodes = self.tree.level(level);
        let partner = self.lists.far(level, node)[slot].node;
        let e = KernelBlock::new(
            &self.kernel,
            self.tree.coords(),
            nodes[node].range(),
            nodes[partner].range(),
        );
        let (block, transposed) = self.resolve(level, node, slot);
        let xs = &x[nodes[partner].range()];
        if transposed {
            block.apply_transpose_add(&e, xs, y_node);
        } else {
            block.apply_add(&e, xs, y_node);
        }
    }

    /// `y_leaf += K(leaf, partner) x_partner` for dense slot `slot`, using
    /// `buf` as scratch. Returns the seconds spent generating entries.
    pub fn apply_dense(&self, leaf: usize, slot: usize, x: &[f64], y_leaf: &mut [f64], buf: &mut Vec<f64>) -> f64 {
        let leaves = self.tree.leaves();
        let p = self.lists.dense(leaf).nth(slot).expect("dense slot in range");
        let (tgt, src) = (&leaves[leaf], &leaves[p.node]);
        let xs = &x[src.range()];
        let t = Instant::now();
        let block: &[f64] = match &self.dense {
            Some(cache) => &cache[leaf][slot],
            None => {
                buf.resize(tgt.len() * src.len(), 0.0);
                fill_dense(&self.kernel, self.tree.coords(), tgt, src, p.class, buf);
                buf
            }
        };
        let formation = if self.dense.is_some() {
            0.0
        } else {
            t.elapsed().as_secs_f64()
        };
        gemv_add(block, src.len(), xs, y_leaf);
        formation
    }

    /// Product in tree order: `y = A~ x`. Returns seconds spent generating
    /// dense entries.
    pub fn matvec_tree_order(&self, x: &[f64], y: &mut [f64]) -> Result<f64> {
        check_len(self.n(), x.len())?;
        check_len(self.n(), y.len())?;
        y.iter_mut().for_each(|v| *v = 0.0);
        let leaves = self.tree.leaves();
        let formation: f64 = split_by_nodes(y, leaves)
            .into_par_iter()
            .enumerate()
            .map_init(Vec::new, |buf, (i, yi)| {
                let slots = self.lists.dense(i).count();
                (0..slots).map(|k| self.apply_dense(i, k, x, yi, buf)).sum::<f64>()
            })
            .sum();
        for level in 1..=self.depth() {
            let nodes = self.tree.level(level);
            split_by_nodes(y, nodes)
                .into_par_iter()
                .enumerate()
                .for_each(|(i, yi)| {
                    for k in 0..self.far[level][i].len() {
                        self.apply_far(level, i, k, x, yi);
                    }
                });
        }
        Ok(formation)
    }

    /// `A~ x` in the caller's particle order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.matvec_timed(x)?.0)
    }

    pub fn matvec_timed(&self, x: &[f64]) -> Result<(Vec<f64>, MatvecTiming)> {
        check_len(self.n(), x.len())?;
        let t = Instant::now();
        let xt = self.tree.to_tree_order(x);
        let mut yt = vec![0.0; x.len()];
        let formation = self.matvec_tree_order(&xt, &mut yt)?;
        let y = self.tree.from_tree_order(&yt);
        Ok((
            y,
            MatvecTiming {
                total_s: t.elapsed().as_secs_f64(),
                dense_formation_s: formation,
            },
        ))
    }

    pub fn stats(&self) -> RepStats {
        let mut s = RepStats {
            n: self.n(),
            depth: self.depth(),
            lowrank_blocks: 0,
            dense_blocks: 0,
            lowrank_floats: 0,
            dense_floats: 0,
            pivot_ints: 0,
            max_rank: 0,
            aca_calls: self.aca_calls,
        };
        for level in 0..=self.depth() {
            for node in 0..self.far[level].len() {
                for slot in 0..self.far[level][node].len() {
                    let r = self.rank(level, node, slot);
                    s.lowrank_blocks += 1;
                    s.lowrank_floats += (r * r) as u64;
                    s.pivot_ints += 2 * r as u64;
                    s.max_rank = s.max_rank.max(r);
                }
            }
        }
        let leaves = self.tree.leaves();
        for (i, leaf) in leaves.iter().enumerate() {
            for p in self.lists.dense(i) {
                s.dense_blocks += 1;
                s.dense_floats += (leaf.len() * leaves[p.node].len()) as u64;
            }
        }
        s
    }

    /// `sum |X| |Y|` over all blocks; equals `N^2` for a valid partition.
    pub fn coverage(&self) -> u128 {
        self.lists.coverage(&self.tree)
    }

    /// Ranks of all ordered admissible blocks with their level and class.
    pub fn block_ranks(&self) -> Vec<(usize, AdmissibilityClass, usize)> {
        let mut out = Vec::new();
        for level in 0..=self.depth() {
            for node in 0..self.far[level].len() {
                for (slot, p) in self.lists.far(level, node).iter().enumerate() {
                    out.push((level, p.class, self.rank(level, node, slot)));
                }
            }
        }
        out
    }
}

/// Fills the dense block between two leaves, row-major. Self blocks get the
/// kernel's diagonal value on the diagonal.
pub fn fill_dense(
    kernel: &KernelSpec,
    coords: &Coords,
    tgt: &Node,
    src: &Node,
    class: AdmissibilityClass,
    buf: &mut [f64],
) {
    let n = src.len();
    for (a, row) in buf.chunks_exact_mut(n).enumerate().take(tgt.len()) {
        let t = coords.point(tgt.start + a);
        if class == AdmissibilityClass::SelfBlock {
            let diag = src.start + a;
            kernel.fill_row(t, coords, src.start..diag, &mut row[..a]);
            row[a] = kernel.diagonal.value();
            kernel.fill_row(t, coords, diag + 1..src.end, &mut row[a + 1..]);
        } else {
            kernel.fill_row(t, coords, src.range(), row);
        }
    }
}

fn gemv_add(a: &[f64], ncols: usize, x: &[f64], y: &mut [f64]) {
    if ncols == 0 {
        return;
    }
    for (row, yi) in a.chunks_exact(ncols).zip(y.iter_mut()) {
        let mut acc = [0.0f64; 4];
        let head = ncols - ncols % 4;
        let mut k = 0;
        while k < head {
            acc[0] += row[k] * x[k];
            acc[1] += row[k + 1] * x[k + 1];
            acc[2] += row[k + 2] * x[k + 2];
            acc[3] += row[k + 3] * x[k + 3];
            k += 4;
        }
        for j in head..ncols {
            acc[0] += row[j] * x[j];
        }
        *yi += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
}

/// Splits `y` into the consecutive ranges owned by `nodes`, which must tile
/// `0..y.len()` in order.
pub fn split_by_nodes<'a>(mut y: &'a mut [f64], nodes: &[Node]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut offset = 0;
    for node in nodes {
        debug_assert_eq!(node.start, offset);
        let (head, tail) = std::mem::take(&mut y).split_at_mut(node.len());
        out.push(head);
        y = tail;
        offset = node.end;
    }
    out
}

/// Direct `O(N^2)` product `A x` in the caller's particle order.
pub fn direct_matvec(kernel: &KernelSpec, pts: &PointSet, x: &[f64]) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..pts.len()).collect();
    direct_rows(kernel, pts, x, &rows)
}

/// Selected entries `(A x)_i` by direct summation.
pub fn direct_rows(kernel: &KernelSpec, pts: &PointSet, x: &[f64], rows: &[usize]) -> Result<Vec<f64>> {
    check_len(pts.len(), x.len())?;
    let coords = Coords::from_points(pts.points());
    let n = pts.len();
    Ok(rows
        .par_iter()
        .map(|&i| {
            let t = coords.point(i);
            kernel.row_dot(t, &coords, 0..i, &x[..i])
                + kernel.diagonal.value() * x[i]
                + kernel.row_dot(t, &coords, i + 1..n, &x[i + 1..])
        })
        .collect())
}

/// `|a - b|_2 / |b|_2`
pub fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{generate_points, Distribution};

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        generate_points(Distribution::UniformRandom, n, seed)
            .unwrap()
            .points()
            .iter()
            .map(|p| p.x)
            .collect()
    }

    #[test]
    fn small_cloud_is_dense() {
        let pts = generate_points(Distribution::UniformRandom, 100, 1).unwrap();
        let k = KernelSpec::laplace3d();
        let h = HMatrix::new(&pts, &k, &HMatrixOptions::new(Variant::Hodlr3d)).unwrap();
        assert_eq!(h.depth(), 0);
        let s = h.stats();
        assert_eq!(s.compression_ratio(), 1.0);
        assert_eq!(s.lowrank_blocks, 0);
        let x = random_vec(100, 2);
        let exact = direct_matvec(&k, &pts, &x).unwrap();
        assert!(relative_error(&h.matvec(&x).unwrap(), &exact) < 1e-14);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let pts = generate_points(Distribution::UniformRandom, 3000, 1).unwrap();
        let h = HMatrix::new(&pts, &KernelSpec::laplace3d(), &HMatrixOptions::new(Variant::Hodlr)).unwrap();
        assert!(h.matvec(&vec![0.0; 3000]).unwrap().iter().all(|&v| v == 0.0));
        assert!(h.matvec(&vec![0.0; 2999]).is_err());
    }

    #[test]
    fn all_variants_match_direct_sum() {
        let pts = generate_points(Distribution::UniformRandom, 2000, 11).unwrap();
        let k = KernelSpec::laplace3d();
        let x = random_vec(2000, 12);
        let exact = direct_matvec(&k, &pts, &x).unwrap();
        for v in Variant::ALL {
            for reuse in [false, true] {
                let mut o = HMatrixOptions::new(v).n_max(64);
                o.reuse_transpose = reuse;
                let h = HMatrix::new(&pts, &k, &o).unwrap();
                assert!(h.depth() >= 2);
                assert_eq!(h.coverage(), 2000u128 * 2000);
                let err = relative_error(&h.matvec(&x).unwrap(), &exact);
                assert!(err < 1e-6, "{v} reuse={reuse}: {err}");
            }
        }
    }

    #[test]
    fn cached_dense_blocks_give_the_same_product() {
        let pts = generate_points(Distribution::UniformRandom, 1500, 3).unwrap();
        let k = KernelSpec::helmholtz_re();
        let x = random_vec(1500, 4);
        let o = HMatrixOptions::new(Variant::HStrong).n_max(50);
        let a = HMatrix::new(&pts, &k, &o).unwrap().matvec(&x).unwrap();
        let mut oc = o;
        oc.cache_dense = true;
        let b = HMatrix::new(&pts, &k, &oc).unwrap().matvec(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transpose_reuse_halves_aca_work() {
        let pts = generate_points(Distribution::UniformRandom, 2000, 5).unwrap();
        let k = KernelSpec::laplace3d();
        let mut o = HMatrixOptions::new(Variant::Hodlr).n_max(64);
        o.reuse_transpose = false;
        let full = HMatrix::new(&pts, &k, &o).unwrap().stats();
        o.reuse_transpose = true;
        let half = HMatrix::new(&pts, &k, &o).unwrap().stats();
        assert_eq!(full.aca_calls, full.lowrank_blocks);
        assert_eq!(2 * half.aca_calls, half.lowrank_blocks);
    }
}
