//! Balanced octree, same-level cube classification and per-variant
//! interaction lists.
//!
//! Particles are sorted by the Morton code of their finest-level grid cell, so
//! every node owns a contiguous range of the permuted ("tree order") index
//! space. Only non-empty nodes are stored; an empty cube is still part of the
//! uniform subdivision but owns no particles and takes part in no block.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel::{Coords, Point3, PointSet};

/// Bits per axis of the finest grid used to sort particles.
pub const GRID_BITS: u32 = 21;
pub const DEFAULT_DEPTH_CAP: usize = 12;
pub const DEFAULT_N_MAX: usize = 216;

/// An axis-aligned cube: the computational domain or a cell of the octree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub center: Point3,
    pub half_width: f64,
}

impl Default for Domain {
    /// `[-1, 1]^3`
    fn default() -> Self {
        Self {
            center: Point3::new(0.0, 0.0, 0.0),
            half_width: 1.0,
        }
    }
}

impl Domain {
    pub fn contains(&self, p: &Point3) -> bool {
        let h = self.half_width;
        (p.x - self.center.x).abs() <= h && (p.y - self.center.y).abs() <= h && (p.z - self.center.z).abs() <= h
    }

    fn lower(&self) -> Point3 {
        let h = self.half_width;
        Point3::new(self.center.x - h, self.center.y - h, self.center.z - h)
    }
}

/// A cube of the uniform subdivision, addressed by level and grid index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    pub level: u32,
    pub grid: [u32; 3],
}

impl Cube {
    pub const ROOT: Cube = Cube {
        level: 0,
        grid: [0, 0, 0],
    };

    pub fn new(level: u32, grid: [u32; 3]) -> Result<Self> {
        let side = 1u64 << level;
        if level > GRID_BITS || grid.iter().any(|&g| g as u64 >= side) {
            return Err(Error::InvalidArgument(format!(
                "grid index {grid:?} invalid at level {level}"
            )));
        }
        Ok(Self { level, grid })
    }

    pub fn morton(&self) -> u64 {
        morton_encode(self.grid)
    }

    pub fn from_morton(level: u32, code: u64) -> Self {
        Self {
            level,
            grid: morton_decode(code),
        }
    }

    pub fn half_width(&self, domain: &Domain) -> f64 {
        domain.half_width / (1u64 << self.level) as f64
    }

    pub fn center(&self, domain: &Domain) -> Point3 {
        let h = self.half_width(domain);
        let lo = domain.lower();
        let c = |lo: f64, g: u32| lo + h * (2.0 * g as f64 + 1.0);
        Point3::new(c(lo.x, self.grid[0]), c(lo.y, self.grid[1]), c(lo.z, self.grid[2]))
    }

    pub fn parent(&self) -> Option<Cube> {
        (self.level > 0).then(|| Cube {
            level: self.level - 1,
            grid: self.grid.map(|g| g >> 1),
        })
    }

    /// Children in Morton order.
    pub fn children(&self) -> [Cube; 8] {
        let base = self.morton() << 3;
        std::array::from_fn(|k| Cube::from_morton(self.level + 1, base + k as u64))
    }

    /// The cube at grid offset `d`, if it lies inside the domain.
    pub fn offset(&self, d: [i64; 3]) -> Option<Cube> {
        let side = 1i64 << self.level;
        let mut grid = [0u32; 3];
        for k in 0..3 {
            let g = self.grid[k] as i64 + d[k];
            if !(0..side).contains(&g) {
                return None;
            }
            grid[k] = g as u32;
        }
        Some(Cube {
            level: self.level,
            grid,
        })
    }

    fn delta(&self, other: &Cube) -> [i64; 3] {
        std::array::from_fn(|k| other.grid[k] as i64 - self.grid[k] as i64)
    }
}

fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | x << 32) & 0x1f00000000ffff;
    x = (x | x << 16) & 0x1f0000ff0000ff;
    x = (x | x << 8) & 0x100f00f00f00f00f;
    x = (x | x << 4) & 0x10c30c30c30c30c3;
    x = (x | x << 2) & 0x1249249249249249;
    x
}

fn compact_bits(v: u64) -> u32 {
    let mut x = v & 0x1249249249249249;
    x = (x | x >> 2) & 0x10c30c30c30c30c3;
    x = (x | x >> 4) & 0x100f00f00f00f00f;
    x = (x | x >> 8) & 0x1f0000ff0000ff;
    x = (x | x >> 16) & 0x1f00000000ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x as u32
}

/// Interleaves the grid index with x in the lowest bit.
pub fn morton_encode(grid: [u32; 3]) -> u64 {
    spread_bits(grid[0]) | spread_bits(grid[1]) << 1 | spread_bits(grid[2]) << 2
}

pub fn morton_decode(code: u64) -> [u32; 3] {
    [compact_bits(code), compact_bits(code >> 1), compact_bits(code >> 2)]
}

/// Relative position of two same-level cubes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdmissibilityClass {
    SelfBlock,
    Face,
    Edge,
    Vertex,
    WellSeparated,
}

impl AdmissibilityClass {
    pub const ALL: [AdmissibilityClass; 5] = [
        AdmissibilityClass::SelfBlock,
        AdmissibilityClass::Face,
        AdmissibilityClass::Edge,
        AdmissibilityClass::Vertex,
        AdmissibilityClass::WellSeparated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdmissibilityClass::SelfBlock => "self",
            AdmissibilityClass::Face => "face",
            AdmissibilityClass::Edge => "edge",
            AdmissibilityClass::Vertex => "vertex",
            AdmissibilityClass::WellSeparated => "well-separated",
        }
    }

    pub fn is_touching(&self) -> bool {
        matches!(
            self,
            AdmissibilityClass::Face | AdmissibilityClass::Edge | AdmissibilityClass::Vertex
        )
    }
}

impl fmt::Display for AdmissibilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn classify_delta(d: [i64; 3]) -> AdmissibilityClass {
    let max = d.iter().map(|v| v.abs()).max().unwrap_or(0);
    match max {
        0 => AdmissibilityClass::SelfBlock,
        1 => match d.iter().filter(|&&v| v != 0).count() {
            1 => AdmissibilityClass::Face,
            2 => AdmissibilityClass::Edge,
            _ => AdmissibilityClass::Vertex,
        },
        _ => AdmissibilityClass::WellSeparated,
    }
}

pub fn classify_pair(a: &Cube, b: &Cube) -> Result<AdmissibilityClass> {
    if a.level != b.level {
        return Err(Error::InvalidArgument(format!(
            "cubes on different levels ({} and {})",
            a.level, b.level
        )));
    }
    Ok(classify_delta(a.delta(b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Compresses vertex-sharing and well-separated blocks.
    Hodlr3d,
    /// Compresses every off-diagonal block.
    Hodlr,
    /// Compresses well-separated blocks only.
    HStrong,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Hodlr3d, Variant::Hodlr, Variant::HStrong];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Hodlr3d => "hodlr3d",
            Variant::Hodlr => "hodlr",
            Variant::HStrong => "hstrong",
        }
    }

    /// Whether a same-level pair of this class is compressed.
    pub fn is_admissible(&self, class: AdmissibilityClass) -> bool {
        use AdmissibilityClass::*;
        match self {
            Variant::Hodlr3d => matches!(class, Vertex | WellSeparated),
            Variant::Hodlr => class != SelfBlock,
            Variant::HStrong => class == WellSeparated,
        }
    }

    /// Whether a non-admissible pair of this class is refined further
    /// (and becomes dense at the leaf level).
    pub fn is_near(&self, class: AdmissibilityClass) -> bool {
        use AdmissibilityClass::*;
        match self {
            Variant::Hodlr3d => matches!(class, Face | Edge),
            Variant::Hodlr => false,
            Variant::HStrong => class.is_touching(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hodlr3d" => Ok(Variant::Hodlr3d),
            "hodlr" => Ok(Variant::Hodlr),
            "hstrong" | "h-strong" | "h" => Ok(Variant::HStrong),
            _ => Err(Error::InvalidArgument(format!("unknown variant `{s}`"))),
        }
    }
}

const NEIGHBOR_OFFSETS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut k = 0;
    while k < 27 {
        let d = [(k % 3) as i64 - 1, ((k / 3) % 3) as i64 - 1, (k / 9) as i64 - 1];
        if !(d[0] == 0 && d[1] == 0 && d[2] == 0) {
            out[n] = d;
            n += 1;
        }
        k += 1;
    }
    out
};

/// The clan of `cube`: children of its parent and of the parent's near
/// neighbours, excluding `cube` itself, in Morton order and classified
/// relative to `cube`. Empty at the root.
pub fn clan(cube: &Cube, variant: Variant) -> Vec<(Cube, AdmissibilityClass)> {
    let Some(parent) = cube.parent() else {
        return Vec::new();
    };
    let mut sources = vec![parent];
    for d in NEIGHBOR_OFFSETS {
        if let Some(q) = parent.offset(d) {
            if variant.is_near(classify_delta(d)) {
                sources.push(q);
            }
        }
    }
    let mut out: Vec<(Cube, AdmissibilityClass)> = sources
        .iter()
        .flat_map(|q| q.children())
        .filter(|c| c != cube)
        .map(|c| (c, classify_delta(cube.delta(&c))))
        .collect();
    out.sort_by_key(|(c, _)| c.morton());
    out
}

/// A non-empty cube together with the contiguous range of tree-order
/// indices it owns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Node {
    pub cube: Cube,
    pub start: usize,
    pub end: usize,
}

impl Node {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Debug)]
pub struct Octree {
    domain: Domain,
    depth: usize,
    n_max: usize,
    /// Non-empty nodes per level, sorted by Morton code.
    levels: Vec<Vec<Node>>,
    /// `perm[k]` is the original index of the particle at tree position `k`.
    perm: Vec<usize>,
    coords: Coords,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeOptions {
    pub n_max: usize,
    pub domain: Domain,
    pub depth_cap: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_N_MAX,
            domain: Domain::default(),
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }
}

/// Builds the octree of minimal depth whose leaves all hold fewer than
/// `n_max` particles.
pub fn build_tree(pts: &PointSet, n_max: usize, domain: Domain) -> Result<Octree> {
    Octree::build(
        pts,
        &TreeOptions {
            n_max,
            domain,
            depth_cap: DEFAULT_DEPTH_CAP,
        },
    )
}

impl Octree {
    pub fn build(pts: &PointSet, opts: &TreeOptions) -> Result<Octree> {
        if opts.n_max == 0 {
            return Err(Error::InvalidArgument("N_max must be at least 1".into()));
        }
        if opts.depth_cap > GRID_BITS as usize {
            return Err(Error::InvalidArgument(format!(
                "depth cap {} exceeds the supported {GRID_BITS}",
                opts.depth_cap
            )));
        }
        let sorted = SortedPoints::new(pts, &opts.domain)?;
        let mut depth = 0;
        loop {
            let largest = sorted.largest_cluster(depth);
            if largest < opts.n_max {
                break;
            }
            if depth == opts.depth_cap {
                return Err(Error::DepthExceeded {
                    cap: opts.depth_cap,
                    largest,
                });
            }
            depth += 1;
        }
        pts.check_distinct()?;
        Ok(sorted.into_tree(pts, opts.domain, depth, opts.n_max))
    }

    /// A tree of exactly `depth` levels, regardless of leaf occupancy.
    pub fn with_depth(pts: &PointSet, depth: usize, domain: Domain) -> Result<Octree> {
        if depth > GRID_BITS as usize {
            return Err(Error::InvalidArgument(format!("depth {depth} exceeds {GRID_BITS}")));
        }
        let sorted = SortedPoints::new(pts, &domain)?;
        pts.check_distinct()?;
        let n_max = sorted.largest_cluster(depth) + 1;
        Ok(sorted.into_tree(pts, domain, depth, n_max))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Leaf level `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn num_points(&self) -> usize {
        self.perm.len()
    }

    /// Non-empty nodes of `level` in Morton order.
    pub fn level(&self, level: usize) -> &[Node] {
        &self.levels[level]
    }

    pub fn leaves(&self) -> &[Node] {
        &self.levels[self.depth]
    }

    pub fn find(&self, cube: &Cube) -> Option<usize> {
        let nodes = self.levels.get(cube.level as usize)?;
        let m = cube.morton();
        nodes.binary_search_by_key(&m, |n| n.cube.morton()).ok()
    }

    /// Tree-order range owned by `cube`; empty if the cube holds no particles.
    pub fn cluster(&self, cube: &Cube) -> Range<usize> {
        self.find(cube)
            .map(|i| self.levels[cube.level as usize][i].range())
            .unwrap_or(0..0)
    }

    /// Indices at `level + 1` of the non-empty children of node `idx`.
    pub fn children(&self, level: usize, idx: usize) -> Range<usize> {
        if level >= self.depth {
            return 0..0;
        }
        let m = self.levels[level][idx].cube.morton() << 3;
        let next = &self.levels[level + 1];
        let lo = next.partition_point(|n| n.cube.morton() < m);
        let hi = next.partition_point(|n| n.cube.morton() < m + 8);
        lo..hi
    }

    /// Original particle indices owned by a node.
    pub fn index_set(&self, node: &Node) -> &[usize] {
        &self.perm[node.range()]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Coordinates in tree order.
    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn to_tree_order(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| x[i]).collect()
    }

    pub fn from_tree_order(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }

    /// All non-empty cubes, level by level.
    pub fn cubes(&self) -> Vec<Vec<Cube>> {
        self.levels.iter().map(|l| l.iter().map(|n| n.cube).collect()).collect()
    }
}

struct SortedPoints {
    codes: Vec<u64>,
    perm: Vec<usize>,
}

impl SortedPoints {
    fn new(pts: &PointSet, domain: &Domain) -> Result<Self> {
        if pts.is_empty() {
            return Err(Error::InvalidArgument("empty point set".into()));
        }
        if domain.half_width.is_nan() || domain.half_width <= 0.0 {
            return Err(Error::InvalidArgument("domain half-width must be positive".into()));
        }
        let lo = domain.lower();
        let side = (1u64 << GRID_BITS) as f64;
        let scale = side / (2.0 * domain.half_width);
        let cell = |v: f64, lo: f64| ((v - lo) * scale).floor().clamp(0.0, side - 1.0) as u32;
        let mut keyed = Vec::with_capacity(pts.len());
        for (i, p) in pts.points().iter().enumerate() {
            if !domain.contains(p) {
                return Err(Error::InvalidArgument(format!(
                    "particle {i} at ({}, {}, {}) lies outside the domain",
                    p.x, p.y, p.z
                )));
            }
            let code = morton_encode([cell(p.x, lo.x), cell(p.y, lo.y), cell(p.z, lo.z)]);
            keyed.push((code, i));
        }
        keyed.sort_unstable();
        Ok(Self {
            codes: keyed.iter().map(|k| k.0).collect(),
            perm: keyed.iter().map(|k| k.1).collect(),
        })
    }

    fn prefix(code: u64, level: usize) -> u64 {
        code >> (3 * (GRID_BITS as usize - level))
    }

    fn largest_cluster(&self, level: usize) -> usize {
        self.runs(level).map(|(_, r)| r.len()).max().unwrap_or(0)
    }

    fn runs(&self, level: usize) -> impl Iterator<Item = (u64, Range<usize>)> + '_ {
        let mut start = 0;
        std::iter::from_fn(move || {
            if start >= self.codes.len() {
                return None;
            }
            let key = Self::prefix(self.codes[start], level);
            let len = self.codes[start..].partition_point(|&c| Self::prefix(c, level) == key);
            let r = start..start + len;
            start += len;
            Some((key, r))
        })
    }

    fn into_tree(self, pts: &PointSet, domain: Domain, depth: usize, n_max: usize) -> Octree {
        let levels = (0..=depth)
            .map(|l| {
                self.runs(l)
                    .map(|(key, r)| Node {
                        cube: Cube::from_morton(l as u32, key),
                        start: r.start,
                        end: r.end,
                    })
                    .collect()
            })
            .collect();
        let coords = Coords::from_points(self.perm.iter().map(|&i| &pts.points()[i]));
        Octree {
            domain,
            depth,
            n_max,
            levels,
            perm: self.perm,
            coords,
        }
    }
}

/// A partner of a node at the same level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partner {
    pub node: usize,
    pub class: AdmissibilityClass,
}

/// Per-level, per-node admissible (`far`) and refined (`near`) partners.
/// Partners are listed in Morton order; empty cubes never appear.
#[derive(Clone, Debug)]
pub struct InteractionLists {
    variant: Variant,
    depth: usize,
    far: Vec<Vec<Vec<Partner>>>,
    near: Vec<Vec<Vec<Partner>>>,
}

pub fn build_interaction_lists(tree: &Octree, variant: Variant) -> InteractionLists {
    InteractionLists::from_cubes(&tree.cubes(), variant)
}

impl InteractionLists {
    /// Lists over an arbitrary set of present cubes (sorted by Morton code
    /// within each level). Cubes absent from `cubes` are treated as empty.
    pub fn from_cubes(cubes: &[Vec<Cube>], variant: Variant) -> InteractionLists {
        let depth = cubes.len().saturating_sub(1);
        let mut far = Vec::with_capacity(cubes.len());
        let mut near = Vec::with_capacity(cubes.len());
        for level in cubes {
            let lookup = |c: &Cube| level.binary_search_by_key(&c.morton(), |q| q.morton()).ok();
            let mut lf = Vec::with_capacity(level.len());
            let mut ln = Vec::with_capacity(level.len());
            for cube in level {
                let mut f = Vec::new();
                let mut n = Vec::new();
                for (c, class) in clan(cube, variant) {
                    let Some(node) = lookup(&c) else { continue };
                    let p = Partner { node, class };
                    if variant.is_admissible(class) {
                        f.push(p);
                    } else if variant.is_near(class) {
                        n.push(p);
                    }
                }
                lf.push(f);
                ln.push(n);
            }
            far.push(lf);
            near.push(ln);
        }
        InteractionLists {
            variant,
            depth,
            far,
            near,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Admissible (compressed) partners of node `idx` at `level`.
    pub fn far(&self, level: usize, idx: usize) -> &[Partner] {
        &self.far[level][idx]
    }

    /// Partners that are refined further at `level`.
    pub fn near(&self, level: usize, idx: usize) -> &[Partner] {
        &self.near[level][idx]
    }

    /// Dense blocks of leaf `idx`: the self block first, then the near
    /// partners.
    pub fn dense(&self, idx: usize) -> impl Iterator<Item = Partner> + '_ {
        std::iter::once(Partner {
            node: idx,
            class: AdmissibilityClass::SelfBlock,
        })
        .chain(self.near[self.depth][idx].iter().copied())
    }

    /// Partners of a given class among both lists.
    pub fn of_class(&self, level: usize, idx: usize, class: AdmissibilityClass) -> Vec<usize> {
        self.far[level][idx]
            .iter()
            .chain(&self.near[level][idx])
            .filter(|p| p.class == class)
            .map(|p| p.node)
            .collect()
    }

    pub fn num_far_blocks(&self) -> usize {
        self.far.iter().flatten().map(Vec::len).sum()
    }

    /// `sum |X| |Y|` over every block of the representation, which equals
    /// `N^2` exactly when the blocks partition the matrix.
    pub fn coverage(&self, tree: &Octree) -> u128 {
        let mut area = 0u128;
        for level in 0..=self.depth {
            let nodes = tree.level(level);
            for (i, node) in nodes.iter().enumerate() {
                for p in &self.far[level][i] {
                    area += node.len() as u128 * nodes[p.node].len() as u128;
                }
            }
        }
        let leaves = tree.leaves();
        for (i, node) in leaves.iter().enumerate() {
            for p in self.dense(i) {
                area += node.len() as u128 * leaves[p.node].len() as u128;
            }
        }
        area
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Dense,
    LowRank,
}

impl BlockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::Dense => "dense",
            BlockKind::LowRank => "lowrank",
        }
    }
}

/// Number of ordered blocks of one class and kind at one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CensusCount {
    pub level: usize,
    pub class: AdmissibilityClass,
    pub kind: BlockKind,
    pub count: u64,
}

/// A closed-form block count `num / den`, kept exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rational {
    pub num: i128,
    pub den: i128,
}

impl Rational {
    pub fn as_integer(&self) -> Option<i128> {
        (self.num % self.den == 0).then(|| self.num / self.den)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_integer() {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "{}/{}", self.num, self.den),
        }
    }
}

/// Which total a closed-form count refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CensusTotal {
    Dense,
    LowRank(AdmissibilityClass),
    /// All low-rank blocks, whatever their class.
    LowRankAll,
}

impl CensusTotal {
    pub fn label(&self) -> String {
        match self {
            CensusTotal::Dense => "dense".into(),
            CensusTotal::LowRank(c) => format!("lowrank-{c}"),
            CensusTotal::LowRankAll => "lowrank".into(),
        }
    }
}

/// Enumerated total next to its closed form. A missing formula means the
/// variant has no blocks of that kind, so the expected count is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormulaCheck {
    pub total: CensusTotal,
    pub enumerated: u64,
    pub formula: Option<Rational>,
}

impl FormulaCheck {
    pub fn expected(&self) -> Option<i128> {
        match self.formula {
            Some(r) => r.as_integer(),
            None => Some(0),
        }
    }

    pub fn matches(&self) -> bool {
        self.expected() == Some(self.enumerated as i128)
    }
}

#[derive(Clone, Debug)]
pub struct BlockCensus {
    pub variant: Variant,
    pub depth: usize,
    pub counts: Vec<CensusCount>,
    pub checks: Vec<FormulaCheck>,
}

impl BlockCensus {
    pub fn total(&self, kind: BlockKind, class: Option<AdmissibilityClass>) -> u64 {
        self.counts
            .iter()
            .filter(|c| c.kind == kind && class.map_or(true, |k| c.class == k))
            .map(|c| c.count)
            .sum()
    }

    pub fn dense_total(&self) -> u64 {
        self.total(BlockKind::Dense, None)
    }

    pub fn lowrank_total(&self) -> u64 {
        self.total(BlockKind::LowRank, None)
    }

    pub fn count(&self, level: usize, class: AdmissibilityClass, kind: BlockKind) -> u64 {
        self.counts
            .iter()
            .find(|c| c.level == level && c.class == class && c.kind == kind)
            .map_or(0, |c| c.count)
    }

    pub fn check(&self, total: CensusTotal) -> &FormulaCheck {
        self.checks
            .iter()
            .find(|c| c.total == total)
            .expect("every total is checked")
    }
}

/// Counts the blocks of `lists` by level, class and kind.
pub fn census(tree: &Octree, lists: &InteractionLists) -> BlockCensus {
    census_of_cubes(&tree.cubes(), lists)
}

/// Census of a full tree of depth `depth` in which no cube is empty.
pub fn full_census(depth: usize, variant: Variant) -> BlockCensus {
    let cubes: Vec<Vec<Cube>> = (0..=depth)
        .map(|l| (0..1u64 << (3 * l)).map(|m| Cube::from_morton(l as u32, m)).collect())
        .collect();
    let lists = InteractionLists::from_cubes(&cubes, variant);
    census_of_cubes(&cubes, &lists)
}

fn census_of_cubes(cubes: &[Vec<Cube>], lists: &InteractionLists) -> BlockCensus {
    use std::collections::BTreeMap;
    let depth = lists.depth();
    let mut tally: BTreeMap<(usize, AdmissibilityClass, BlockKind), u64> = BTreeMap::new();
    for (level, nodes) in cubes.iter().enumerate() {
        for i in 0..nodes.len() {
            for p in lists.far(level, i) {
                *tally.entry((level, p.class, BlockKind::LowRank)).or_default() += 1;
            }
        }
    }
    for i in 0..cubes[depth].len() {
        for p in lists.dense(i) {
            *tally.entry((depth, p.class, BlockKind::Dense)).or_default() += 1;
        }
    }
    let counts: Vec<CensusCount> = tally
        .into_iter()
        .map(|((level, class, kind), count)| CensusCount {
            level,
            class,
            kind,
            count,
        })
        .collect();
    let mut census = BlockCensus {
        variant: lists.variant(),
        depth,
        counts,
        checks: Vec::new(),
    };
    use AdmissibilityClass::*;
    let totals = [
        CensusTotal::Dense,
        CensusTotal::LowRank(WellSeparated),
        CensusTotal::LowRank(Vertex),
        CensusTotal::LowRank(Edge),
        CensusTotal::LowRank(Face),
        CensusTotal::LowRankAll,
    ];
    census.checks = totals
        .iter()
        .map(|&total| FormulaCheck {
            total,
            enumerated: match total {
                CensusTotal::Dense => census.dense_total(),
                CensusTotal::LowRank(c) => census.total(BlockKind::LowRank, Some(c)),
                CensusTotal::LowRankAll => census.lowrank_total(),
            },
            formula: closed_form(census.variant, total, depth as u32),
        })
        .collect();
    census
}

/// Published closed-form totals of dense and low-rank blocks for a tree of
/// depth `l`. `None` where the published table has no entry.
pub fn closed_form(variant: Variant, total: CensusTotal, l: u32) -> Option<Rational> {
    use AdmissibilityClass::*;
    let p8 = |k: u32| 8i128.pow(k);
    let p4 = |k: u32| 4i128.pow(k);
    let p2 = |k: u32| 2i128.pow(k);
    let li = l as i128;
    let r = |num: i128, den: i128| Some(Rational { num, den });
    match (variant, total) {
        (Variant::Hodlr, CensusTotal::Dense) => r(p8(l), 1),
        (Variant::Hodlr3d, CensusTotal::Dense) => r(67 * p8(l) - 120 * p4(l) + 56 * p2(l), 3),
        (Variant::HStrong, CensusTotal::Dense) => r(223 * p8(l) - 126 * p4(l + 1) + 49 * p2(l + 3) - 104, 7),
        (Variant::Hodlr3d, CensusTotal::LowRank(WellSeparated)) => {
            r(444 * p8(l + 1) - 63 * p4(l + 4) + 735 * p2(l + 5) - 10944, 21)
        }
        (Variant::HStrong, CensusTotal::LowRank(WellSeparated)) => r(
            223 * p8(l + 1) - 630 * p4(l + 2) + 1519 * p2(l + 4) - 6552 * li - 16008,
            7,
        ),
        (Variant::Hodlr3d, CensusTotal::LowRank(Vertex)) => {
            r(25 * p8(l + 1) - 42 * p4(l + 2) + 49 * p2(l + 4) - 312, 21)
        }
        (Variant::Hodlr, CensusTotal::LowRank(Vertex)) => r(8 * (p8(l) - 1), 7),
        (Variant::Hodlr, CensusTotal::LowRank(Edge)) => r(16 * (p8(l) - 1), 7),
        (Variant::Hodlr, CensusTotal::LowRank(Face)) => r(32 * (p8(l) - 1), 7),
        (_, CensusTotal::LowRankAll) => {
            let mut sum = Rational { num: 0, den: 1 };
            for class in [WellSeparated, Vertex, Edge, Face] {
                if let Some(f) = closed_form(variant, CensusTotal::LowRank(class), l) {
                    sum = Rational {
                        num: sum.num * f.den + f.num * sum.den,
                        den: sum.den * f.den,
                    };
                }
            }
            Some(sum)
        }
        _ => None,
    }
}
