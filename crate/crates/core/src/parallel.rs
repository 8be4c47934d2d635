//! Distributed-memory execution model, simulated with one thread per worker.
//!
//! Nodes of each level are dealt to workers round-robin in Morton order.
//! When a level has fewer nodes than workers, each node is handed to a group
//! of `g = ceil(n_p / 8^l)` consecutive workers (wrapping modulo `n_p`), who
//! split its work. Workers own private output buffers and only communicate
//! through an explicit exchange step and a final gather, both of which are
//! logged in a [`CommLedger`].

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Barrier, Mutex};
use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::hmatrix::{FarBlock, HMatrix, HMatrixOptions};
use crate::kernel::{Coords, KernelSpec, PointSet};
use crate::lowrank::{aca_compress, KernelBlock};
use crate::octree::{build_interaction_lists, AdmissibilityClass, Node, Octree, TreeOptions};

/// Assignment of octree nodes to workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    n_p: usize,
}

impl PartitionPlan {
    pub fn new(n_p: usize) -> Result<Self> {
        if n_p == 0 {
            return Err(Error::InvalidArgument("worker count must be at least 1".into()));
        }
        Ok(Self { n_p })
    }

    pub fn workers(&self) -> usize {
        self.n_p
    }

    /// Number of cubes at `level`, saturating for deep levels.
    fn cubes_at(level: usize) -> u64 {
        if level >= 21 {
            u64::MAX
        } else {
            1u64 << (3 * level)
        }
    }

    /// Group size at `level`: 1 when every worker gets whole nodes.
    pub fn group_size(&self, level: usize) -> usize {
        let cubes = Self::cubes_at(level);
        if cubes >= self.n_p as u64 {
            1
        } else {
            self.n_p.div_ceil(cubes as usize)
        }
    }

    /// Workers responsible for the cube with Morton code `morton` at `level`,
    /// in member order.
    pub fn group(&self, level: usize, morton: u64) -> Vec<usize> {
        let g = self.group_size(level);
        if g == 1 {
            return vec![(morton % self.n_p as u64) as usize];
        }
        let k = morton as usize;
        (0..g).map(|t| (k * g + t) % self.n_p).collect()
    }

    /// Position of `worker` in the group of a cube, if it is a member.
    pub fn member_index(&self, level: usize, morton: u64, worker: usize) -> Option<usize> {
        self.group(level, morton).iter().position(|&w| w == worker)
    }

    /// Number of cubes of `level` each worker takes part in.
    pub fn level_loads(&self, level: usize) -> Vec<u64> {
        let n_p = self.n_p as u64;
        let cubes = Self::cubes_at(level);
        if self.group_size(level) == 1 {
            return (0..n_p).map(|w| cubes / n_p + u64::from(w < cubes % n_p)).collect();
        }
        let mut loads = vec![0u64; self.n_p];
        for k in 0..cubes {
            for w in self.group(level, k) {
                loads[w] += 1;
            }
        }
        loads
    }
}

/// `len * t / g .. len * (t + 1) / g`
pub fn chunk(len: usize, g: usize, t: usize) -> Range<usize> {
    len * t / g..len * (t + 1) / g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommKind {
    /// Partial pivot-row products of a shared low-rank block.
    LowRankExchange,
    /// Worker output vectors summed onto worker 0.
    Gather,
}

impl CommKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommKind::LowRankExchange => "lowrank-exchange",
            CommKind::Gather => "gather",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommStep {
    pub kind: CommKind,
    pub level: usize,
    /// Floats sent.
    pub floats: u64,
    /// Individual messages.
    pub messages: u64,
}

/// Communication volume of one distributed product.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub steps: Vec<CommStep>,
}

impl CommLedger {
    pub fn total_floats(&self) -> u64 {
        self.steps.iter().map(|s| s.floats).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.steps.iter().map(|s| s.messages).sum()
    }

    pub fn floats_of(&self, kind: CommKind) -> u64 {
        self.steps.iter().filter(|s| s.kind == kind).map(|s| s.floats).sum()
    }
}

/// Thread CPU time in seconds.
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WorkerTiming {
    /// CPU time of the worker thread, excluding time blocked at barriers.
    pub cpu_s: f64,
    pub wall_s: f64,
}

fn average(t: &[WorkerTiming]) -> f64 {
    t.iter().map(|w| w.cpu_s).sum::<f64>() / t.len().max(1) as f64
}

fn maximum(t: &[WorkerTiming]) -> f64 {
    t.iter().map(|w| w.cpu_s).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ParallelMatvec {
    /// The product in the caller's particle order.
    pub y: Vec<f64>,
    pub ledger: CommLedger,
    pub workers: Vec<WorkerTiming>,
    pub wall_s: f64,
}

impl ParallelMatvec {
    pub fn avg_cpu_s(&self) -> f64 {
        average(&self.workers)
    }

    pub fn max_cpu_s(&self) -> f64 {
        maximum(&self.workers)
    }
}

type BlockKey = (usize, usize, usize);

/// A shared admissible block and this worker's position in its group.
struct SharedBlock {
    key: BlockKey,
    group: Vec<usize>,
    member: usize,
}

/// `y = A~ x` with `n_p` simulated workers. With one worker the result is
/// bitwise identical to [`HMatrix::matvec`].
pub fn parallel_matvec(rep: &HMatrix, x: &[f64], n_p: usize) -> Result<ParallelMatvec> {
    check_len(rep.n(), x.len())?;
    let plan = PartitionPlan::new(n_p)?;
    let start = Instant::now();
    let xt = rep.tree().to_tree_order(x);
    let n = rep.n();
    let barrier = Barrier::new(n_p);
    let board: Vec<Mutex<HashMap<BlockKey, Vec<f64>>>> = (0..n_p).map(|_| Mutex::new(HashMap::new())).collect();

    let outputs: Vec<(Vec<f64>, WorkerTiming)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n_p)
            .map(|w| {
                let (plan, xt, board, barrier) = (&plan, &xt, &board, &barrier);
                s.spawn(move || {
                    let wall = Instant::now();
                    let cpu0 = thread_cpu_seconds();
                    let mut y = vec![0.0; n];
                    let shared = phase_one(rep, plan, w, xt, &mut y, &board[w]);
                    let cpu1 = thread_cpu_seconds();
                    barrier.wait();
                    let cpu2 = thread_cpu_seconds();
                    phase_two(rep, &shared, xt, &mut y, board);
                    let cpu3 = thread_cpu_seconds();
                    let timing = WorkerTiming {
                        cpu_s: (cpu1 - cpu0) + (cpu3 - cpu2),
                        wall_s: wall.elapsed().as_secs_f64(),
                    };
                    (y, timing)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut workers = Vec::with_capacity(n_p);
    let mut yt: Option<Vec<f64>> = None;
    for (y, timing) in outputs {
        workers.push(timing);
        match yt.as_mut() {
            None => yt = Some(y),
            Some(acc) => acc.iter_mut().zip(&y).for_each(|(a, b)| *a += b),
        }
    }
    let y = rep.tree().from_tree_order(&yt.unwrap_or_default());
    Ok(ParallelMatvec {
        y,
        ledger: comm_ledger(rep, &plan),
        workers,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Owned work in full, plus this worker's share of the pivot-row products of
/// shared blocks, which are posted to `post`.
fn phase_one(
    rep: &HMatrix,
    plan: &PartitionPlan,
    w: usize,
    x: &[f64],
    y: &mut [f64],
    post: &Mutex<HashMap<BlockKey, Vec<f64>>>,
) -> Vec<SharedBlock> {
    let tree = rep.tree();
    let depth = rep.depth();
    let leaves = tree.leaves();
    let mut buf = Vec::new();
    for (i, leaf) in leaves.iter().enumerate() {
        let group = plan.group(depth, leaf.cube.morton());
        let Some(t) = group.iter().position(|&m| m == w) else {
            continue;
        };
        let yi = &mut y[leaf.range()];
        if group.len() == 1 {
            for k in 0..rep.lists().dense(i).count() {
                rep.apply_dense(i, k, x, yi, &mut buf);
            }
        } else {
            for p in rep.lists().dense(i) {
                let src = &leaves[p.node];
                let cols = chunk(src.len(), group.len(), t);
                dense_cols_add(rep.kernel(), tree.coords(), leaf, src, p.class, cols, x, yi);
            }
        }
    }

    let mut shared = Vec::new();
    let mut posted = HashMap::new();
    for level in 1..=depth {
        let nodes = tree.level(level);
        for (i, node) in nodes.iter().enumerate() {
            let group = plan.group(level, node.cube.morton());
            let Some(t) = group.iter().position(|&m| m == w) else {
                continue;
            };
            let slots = rep.far_blocks(level, i).len();
            if group.len() == 1 {
                for k in 0..slots {
                    rep.apply_far(level, i, k, x, &mut y[node.range()]);
                }
                continue;
            }
            for (k, p) in rep.lists().far(level, i).iter().enumerate() {
                let (block, transposed) = rep.resolve(level, i, k);
                let r = block.rank();
                let e = KernelBlock::new(rep.kernel(), tree.coords(), node.range(), nodes[p.node].range());
                let xs = &x[nodes[p.node].range()];
                let mut partial = vec![0.0; r];
                for a in chunk(r, group.len(), t) {
                    partial[a] = block.gather_one(&e, a, xs, transposed);
                }
                posted.insert((level, i, k), partial);
                shared.push(SharedBlock {
                    key: (level, i, k),
                    group: group.clone(),
                    member: t,
                });
            }
        }
    }
    *post.lock().expect("exchange board poisoned") = posted;
    shared
}

/// Combines the posted partials of every shared block in member order,
/// solves with the pivot submatrix and applies this worker's row chunk.
fn phase_two(
    rep: &HMatrix,
    shared: &[SharedBlock],
    x: &[f64],
    y: &mut [f64],
    board: &[Mutex<HashMap<BlockKey, Vec<f64>>>],
) {
    let _ = x;
    let tree = rep.tree();
    for sb in shared {
        let (level, i, k) = sb.key;
        let (block, transposed) = rep.resolve(level, i, k);
        let r = block.rank();
        if r == 0 {
            continue;
        }
        let mut z = vec![0.0; r];
        for &m in &sb.group {
            let posted = board[m].lock().expect("exchange board poisoned");
            let part = posted.get(&sb.key).expect("every member posts its partial");
            z.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        block.solve(&mut z, transposed);
        let nodes = tree.level(level);
        let node = &nodes[i];
        let partner = &nodes[rep.lists().far(level, i)[k].node];
        let rows = chunk(node.len(), sb.group.len(), sb.member);
        let sub = node.start + rows.start..node.start + rows.end;
        let e = KernelBlock::new(rep.kernel(), tree.coords(), sub.clone(), partner.range());
        for (a, &za) in z.iter().enumerate() {
            block.scatter_one(&e, a, za, &mut y[sub.clone()], transposed);
        }
    }
}

/// `y_tgt += K(tgt, src[cols]) x[src[cols]]`, with `cols` local to `src`.
#[allow(clippy::too_many_arguments)]
fn dense_cols_add(
    kernel: &KernelSpec,
    coords: &Coords,
    tgt: &Node,
    src: &Node,
    class: AdmissibilityClass,
    cols: Range<usize>,
    x: &[f64],
    y: &mut [f64],
) {
    let lo = src.start + cols.start;
    let hi = src.start + cols.end;
    for (a, ya) in y.iter_mut().enumerate().take(tgt.len()) {
        let g = tgt.start + a;
        let t = coords.point(g);
        if class == AdmissibilityClass::SelfBlock && (lo..hi).contains(&g) {
            *ya += kernel.row_dot(t, coords, lo..g, &x[lo..g])
                + kernel.diagonal.value() * x[g]
                + kernel.row_dot(t, coords, g + 1..hi, &x[g + 1..hi]);
        } else {
            *ya += kernel.row_dot(t, coords, lo..hi, &x[lo..hi]);
        }
    }
}

/// Exchange volumes implied by `plan`: `g r` floats per shared admissible
/// block of rank `r` and group size `g`, plus `(n_p - 1) N` for the gather.
/// Dense column partials travel inside the gather.
pub fn comm_ledger(rep: &HMatrix, plan: &PartitionPlan) -> CommLedger {
    let mut ledger = CommLedger::default();
    for level in 1..=rep.depth() {
        let g = plan.group_size(level);
        if g == 1 {
            continue;
        }
        let mut step = CommStep {
            kind: CommKind::LowRankExchange,
            level,
            floats: 0,
            messages: 0,
        };
        for i in 0..rep.tree().level(level).len() {
            for k in 0..rep.far_blocks(level, i).len() {
                step.floats += (g * rep.rank(level, i, k)) as u64;
                step.messages += g as u64;
            }
        }
        ledger.steps.push(step);
    }
    if plan.workers() > 1 {
        ledger.steps.push(CommStep {
            kind: CommKind::Gather,
            level: 0,
            floats: ((plan.workers() - 1) * rep.n()) as u64,
            messages: (plan.workers() - 1) as u64,
        });
    }
    ledger
}

/// Outcome of a distributed initialisation.
#[derive(Clone, Debug)]
pub struct ParallelInit {
    pub rep: HMatrix,
    /// `aca_calls[level][node]`: compressions performed for that node's
    /// admissible blocks, summed over the workers that share it.
    pub aca_calls: Vec<Vec<usize>>,
    pub workers: Vec<WorkerTiming>,
}

impl ParallelInit {
    pub fn avg_cpu_s(&self) -> f64 {
        average(&self.workers)
    }

    pub fn max_cpu_s(&self) -> f64 {
        maximum(&self.workers)
    }
}

/// Builds the representation with `n_p` workers. Every member of a node's
/// group compresses that node's blocks itself, so shared nodes are
/// compressed redundantly and no factors are communicated. Transposed-block
/// reuse is disabled since it would require exchanging factors.
pub fn parallel_initialize(
    pts: &PointSet,
    kernel: &KernelSpec,
    opts: &HMatrixOptions,
    n_p: usize,
) -> Result<ParallelInit> {
    let plan = PartitionPlan::new(n_p)?;
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
    let lists = build_interaction_lists(&tree, opts.variant);
    let aca = opts.aca();
    let mut opts = *opts;
    opts.reuse_transpose = false;
    opts.cache_dense = false;

    type Compressed = Vec<((usize, usize), Vec<FarBlock>)>;
    let results: Vec<Result<(Compressed, WorkerTiming)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n_p)
            .map(|w| {
                let (plan, tree, lists) = (&plan, &tree, &lists);
                s.spawn(move || {
                    let wall = Instant::now();
                    let cpu0 = thread_cpu_seconds();
                    let mut out = Vec::new();
                    for level in 1..=tree.depth() {
                        let nodes = tree.level(level);
                        for (i, node) in nodes.iter().enumerate() {
                            if plan.member_index(level, node.cube.morton(), w).is_none() {
                                continue;
                            }
                            let blocks = lists
                                .far(level, i)
                                .iter()
                                .map(|p| {
                                    let e =
                                        KernelBlock::new(kernel, tree.coords(), node.range(), nodes[p.node].range());
                                    aca_compress(&e, &aca).map(FarBlock::Owned)
                                })
                                .collect::<Result<Vec<_>>>()?;
                            out.push(((level, i), blocks));
                        }
                    }
                    let timing = WorkerTiming {
                        cpu_s: thread_cpu_seconds() - cpu0,
                        wall_s: wall.elapsed().as_secs_f64(),
                    };
                    Ok((out, timing))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut far: Vec<Vec<Option<Vec<FarBlock>>>> =
        (0..=tree.depth()).map(|l| vec![None; tree.level(l).len()]).collect();
    let mut aca_calls: Vec<Vec<usize>> = (0..=tree.depth()).map(|l| vec![0; tree.level(l).len()]).collect();
    let mut workers = Vec::with_capacity(n_p);
    let mut total = 0;
    for r in results {
        let (out, timing) = r?;
        workers.push(timing);
        for ((level, i), blocks) in out {
            aca_calls[level][i] += blocks.len();
            total += blocks.len();
            if far[level][i].is_none() {
                far[level][i] = Some(blocks);
            }
        }
    }
    let far = far
        .into_iter()
        .map(|level| level.into_iter().map(|b| b.unwrap_or_default()).collect())
        .collect();
    let rep = HMatrix::from_parts(tree, lists, kernel, &opts, far, total, start.elapsed().as_secs_f64());
    Ok(ParallelInit {
        rep,
        aca_calls,
        workers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmatrix::HMatrixOptions;
    use crate::kernel::{generate_points, Distribution};
    use crate::octree::Variant;

    fn setup(n: usize, variant: Variant) -> (PointSet, HMatrix, Vec<f64>) {
        let pts = generate_points(Distribution::UniformRandom, n, 3).unwrap();
        let rep = HMatrix::new(&pts, &KernelSpec::laplace3d(), &HMatrixOptions::new(variant).n_max(32)).unwrap();
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        (pts, rep, x)
    }

    #[test]
    fn plan_round_robin_and_groups() {
        let plan = PartitionPlan::new(4).unwrap();
        assert_eq!(plan.group_size(0), 4);
        assert_eq!(plan.group(0, 0), vec![0, 1, 2, 3]);
        assert_eq!(plan.group_size(1), 1);
        assert_eq!(plan.group(1, 5), vec![1]);
        assert_eq!(plan.level_loads(1), vec![2, 2, 2, 2]);

        let plan = PartitionPlan::new(12).unwrap();
        assert_eq!(plan.group_size(1), 2);
        assert_eq!(plan.group(1, 6), vec![0, 1]);
        let loads = plan.level_loads(1);
        assert_eq!(loads.iter().sum::<u64>(), 16);
        assert!(loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 1);
        assert!(PartitionPlan::new(0).is_err());
    }

    #[test]
    fn chunks_tile() {
        let mut covered = Vec::new();
        for t in 0..3 {
            covered.extend(chunk(10, 3, t));
        }
        assert_eq!(covered, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn single_worker_is_bitwise_serial() {
        for variant in Variant::ALL {
            let (_, rep, x) = setup(1500, variant);
            let serial = rep.matvec(&x).unwrap();
            let par = parallel_matvec(&rep, &x, 1).unwrap();
            assert_eq!(serial, par.y);
            assert_eq!(par.ledger.total_floats(), 0);
        }
    }

    #[test]
    fn shared_nodes_match_serial() {
        for n_p in [2, 3, 9, 16] {
            let (_, rep, x) = setup(1500, Variant::Hodlr);
            let serial = rep.matvec(&x).unwrap();
            let par = parallel_matvec(&rep, &x, n_p).unwrap();
            let err = crate::hmatrix::relative_error(&par.y, &serial);
            assert!(err < 1e-13, "n_p {n_p}: {err}");
            assert_eq!(par.ledger.floats_of(CommKind::Gather), ((n_p - 1) * 1500) as u64);
        }
    }

    #[test]
    fn shared_root_leaf_is_split_by_columns() {
        let pts = generate_points(Distribution::UniformRandom, 100, 1).unwrap();
        let rep = HMatrix::new(&pts, &KernelSpec::laplace3d(), &HMatrixOptions::new(Variant::Hodlr3d)).unwrap();
        assert_eq!(rep.depth(), 0);
        let x = vec![1.0; 100];
        let serial = rep.matvec(&x).unwrap();
        let par = parallel_matvec(&rep, &x, 3).unwrap();
        assert!(crate::hmatrix::relative_error(&par.y, &serial) < 1e-14);
    }

    #[test]
    fn exchange_volume_counts_group_times_rank() {
        let (_, rep, _) = setup(1500, Variant::Hodlr);
        let plan = PartitionPlan::new(16).unwrap();
        let ledger = comm_ledger(&rep, &plan);
        let mut expected = 0;
        for i in 0..rep.tree().level(1).len() {
            for k in 0..rep.far_blocks(1, i).len() {
                expected += 2 * rep.rank(1, i, k) as u64;
            }
        }
        assert_eq!(ledger.floats_of(CommKind::LowRankExchange), expected);
    }

    #[test]
    fn redundant_initialisation_matches_serial() {
        let pts = generate_points(Distribution::UniformRandom, 1500, 5).unwrap();
        let mut opts = HMatrixOptions::new(Variant::Hodlr3d).n_max(32);
        opts.reuse_transpose = false;
        let serial = HMatrix::new(&pts, &KernelSpec::laplace3d(), &opts).unwrap();
        let init = parallel_initialize(&pts, &KernelSpec::laplace3d(), &opts, 12).unwrap();
        let plan = PartitionPlan::new(12).unwrap();
        for level in 1..=serial.depth() {
            for (i, node) in serial.tree().level(level).iter().enumerate() {
                assert_eq!(serial.far_blocks(level, i), init.rep.far_blocks(level, i));
                let g = plan.group_size(level);
                assert_eq!(
                    init.aca_calls[level][i],
                    g * serial.far_blocks(level, i).len(),
                    "{:?}",
                    node.cube
                );
            }
        }
    }
}
