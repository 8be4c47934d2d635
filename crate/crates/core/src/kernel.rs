//! Kernel evaluation and particle distributions.
//!
//! A kernel is a radial function `f(r)` of the distance between two
//! particles. The matrix entry between particles `i != j` is
//! `f(|r_i - r_j|)`; the diagonal is governed by a [`DiagonalRule`].
//!
//! Hot loops never call [`eval_entry`]. They go through the block primitives
//! on [`KernelSpec`] (`fill_row`, `row_dot`, `col_axpy`) which dispatch on the
//! kernel once per row and evaluate on structure-of-arrays coordinates.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Separation below which two distinct particles are considered coincident.
pub const MIN_SEPARATION: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn dist(&self, other: &Point3) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn translated(&self, by: Point3) -> Point3 {
        Point3::new(self.x + by.x, self.y + by.y, self.z + by.z)
    }
}

/// How a point cloud was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Distribution {
    /// i.i.d. uniform draws in `[-1, 1]^3`.
    UniformRandom,
    /// Cell centres of an `n x n x n` partition of `[-1, 1]^3`.
    TensorGrid,
    /// Caller-supplied coordinates.
    Explicit,
}

impl Distribution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Distribution::UniformRandom => "uniform-random",
            Distribution::TensorGrid => "tensor-grid",
            Distribution::Explicit => "explicit",
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" | "uniform" => Ok(Distribution::UniformRandom),
            "tensor-grid" | "grid" => Ok(Distribution::TensorGrid),
            _ => Err(Error::InvalidArgument(format!("unknown distribution `{s}`"))),
        }
    }
}

/// An immutable, ordered particle cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<Point3>,
    seed: u64,
    distribution: Distribution,
}

impl PointSet {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self {
            points,
            seed: 0,
            distribution: Distribution::Explicit,
        }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn translated(&self, by: Point3) -> PointSet {
        PointSet {
            points: self.points.iter().map(|p| p.translated(by)).collect(),
            seed: self.seed,
            distribution: self.distribution,
        }
    }

    /// Fails with [`Error::DegenerateGeometry`] if two distinct particles are
    /// closer than [`MIN_SEPARATION`].
    ///
    /// Buckets particles on a grid of spacing `MIN_SEPARATION` and compares
    /// each particle against the 27 surrounding buckets, so it runs in
    /// linear time for any reasonable cloud.
    pub fn check_distinct(&self) -> Result<()> {
        let key = |p: &Point3| {
            [
                (p.x / MIN_SEPARATION).floor() as i64,
                (p.y / MIN_SEPARATION).floor() as i64,
                (p.z / MIN_SEPARATION).floor() as i64,
            ]
        };
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::with_capacity(self.len());
        for (i, p) in self.points.iter().enumerate() {
            let k = key(p);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let nk = [k[0] + dx, k[1] + dy, k[2] + dz];
                        if let Some(others) = buckets.get(&nk) {
                            for &j in others {
                                let d = p.dist(&self.points[j]);
                                if d < MIN_SEPARATION {
                                    return Err(Error::DegenerateGeometry {
                                        i: j,
                                        j: i,
                                        distance: d,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            buckets.entry(k).or_default().push(i);
        }
        Ok(())
    }
}

/// Draws `n` points from `distribution`. Identical arguments give a
/// bit-identical cloud.
pub fn generate_points(distribution: Distribution, n: usize, seed: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("point count must be at least 1".into()));
    }
    let points = match distribution {
        Distribution::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let x = rng.random_range(-1.0..1.0);
                    let y = rng.random_range(-1.0..1.0);
                    let z = rng.random_range(-1.0..1.0);
                    Point3::new(x, y, z)
                })
                .collect()
        }
        Distribution::TensorGrid => {
            let side = cube_root_exact(n)
                .ok_or_else(|| Error::InvalidArgument(format!("tensor grid needs a perfect cube, got N = {n}")))?;
            tensor_grid(side)
        }
        Distribution::Explicit => {
            return Err(Error::InvalidArgument(
                "explicit point sets are built with PointSet::from_points".into(),
            ))
        }
    };
    Ok(PointSet {
        points,
        seed,
        distribution,
    })
}

/// Cell centres of a `side^3` uniform partition of `[-1,1]^3`, x fastest.
pub fn tensor_grid(side: usize) -> Vec<Point3> {
    let h = 2.0 / side as f64;
    let c = |i: usize| -1.0 + h * (i as f64 + 0.5);
    let mut pts = Vec::with_capacity(side * side * side);
    for iz in 0..side {
        for iy in 0..side {
            for ix in 0..side {
                pts.push(Point3::new(c(ix), c(iy), c(iz)));
            }
        }
    }
    pts
}

fn cube_root_exact(n: usize) -> Option<usize> {
    let guess = (n as f64).cbrt().round() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|&s| s * s * s == n)
}

/// Value placed on the diagonal of the kernel matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiagonalRule {
    Zero,
    Value(f64),
}

impl DiagonalRule {
    pub fn value(&self) -> f64 {
        match *self {
            DiagonalRule::Zero => 0.0,
            DiagonalRule::Value(v) => v,
        }
    }
}

pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelKind {
    /// `1 / r`
    Laplace3d,
    /// `1 / r^4`
    InverseQuartic,
    /// `cos(r) / r`, the real part of the unit-wavenumber Helmholtz kernel.
    HelmholtzRe,
    Custom {
        name: String,
        f: RadialFn,
    },
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Custom { name, .. } => write!(f, "Custom({name})"),
            other => f.write_str(other.name()),
        }
    }
}

impl KernelKind {
    pub fn name(&self) -> &str {
        match self {
            KernelKind::Laplace3d => "laplace3d",
            KernelKind::InverseQuartic => "r4",
            KernelKind::HelmholtzRe => "helmholtz-re",
            KernelKind::Custom { name, .. } => name,
        }
    }
}

/// A radial kernel together with its diagonal rule.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub diagonal: DiagonalRule,
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace3d" | "laplace" | "1/r" => Ok(KernelSpec::laplace3d()),
            "r4" | "inverse-quartic" | "1/r4" => Ok(KernelSpec::inverse_quartic()),
            "helmholtz-re" | "helmholtz" | "cos(r)/r" => Ok(KernelSpec::helmholtz_re()),
            _ => Err(Error::InvalidArgument(format!("unknown kernel `{s}`"))),
        }
    }
}

macro_rules! dispatch_radial {
    ($spec:expr, $f:ident => $body:expr) => {
        match &$spec.kind {
            KernelKind::Laplace3d => {
                let $f = |r2: f64| 1.0 / r2.sqrt();
                $body
            }
            KernelKind::InverseQuartic => {
                let $f = |r2: f64| 1.0 / (r2 * r2);
                $body
            }
            KernelKind::HelmholtzRe => {
                let $f = |r2: f64| {
                    let r = r2.sqrt();
                    r.cos() / r
                };
                $body
            }
            KernelKind::Custom { f: custom, .. } => {
                let $f = |r2: f64| custom(r2.sqrt());
                $body
            }
        }
    };
}

impl KernelSpec {
    pub fn laplace3d() -> Self {
        Self::builtin(KernelKind::Laplace3d)
    }

    pub fn inverse_quartic() -> Self {
        Self::builtin(KernelKind::InverseQuartic)
    }

    pub fn helmholtz_re() -> Self {
        Self::builtin(KernelKind::HelmholtzRe)
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::builtin(KernelKind::Custom {
            name: name.into(),
            f: Arc::new(f),
        })
    }

    fn builtin(kind: KernelKind) -> Self {
        Self {
            kind,
            diagonal: DiagonalRule::Zero,
        }
    }

    pub fn with_diagonal(mut self, diagonal: DiagonalRule) -> Self {
        self.diagonal = diagonal;
        self
    }

    pub fn name(&self) -> &str {
        self.kind.name()
    }

    /// `f(r)` for a single distance.
    pub fn radial(&self, r: f64) -> f64 {
        self.radial_r2(r * r)
    }

    #[inline]
    pub fn radial_r2(&self, r2: f64) -> f64 {
        dispatch_radial!(self, f => f(r2))
    }

    /// `out[k] = f(|target - src[range.start + k]|)`.
    ///
    /// No diagonal or coincidence handling: callers must not pass a range
    /// that contains `target` itself.
    pub fn fill_row(&self, target: Point3, src: &Coords, range: Range<usize>, out: &mut [f64]) {
        dispatch_radial!(self, f => fill_row_impl(f, target, src, range, out))
    }

    /// `sum_k f(|target - src[range.start + k]|) * w[k]`.
    pub fn row_dot(&self, target: Point3, src: &Coords, range: Range<usize>, w: &[f64]) -> f64 {
        dispatch_radial!(self, f => row_dot_impl(f, target, src, range, w))
    }

    /// `y[k] += alpha * f(|dst[range.start + k] - source|)`.
    pub fn col_axpy(&self, source: Point3, dst: &Coords, range: Range<usize>, alpha: f64, y: &mut [f64]) {
        dispatch_radial!(self, f => col_axpy_impl(f, source, dst, range, alpha, y))
    }
}

#[inline(always)]
fn fill_row_impl<F: Fn(f64) -> f64>(f: F, t: Point3, src: &Coords, range: Range<usize>, out: &mut [f64]) {
    let xs = &src.x[range.clone()];
    let ys = &src.y[range.clone()];
    let zs = &src.z[range];
    let out = &mut out[..xs.len()];
    for k in 0..xs.len() {
        let dx = t.x - xs[k];
        let dy = t.y - ys[k];
        let dz = t.z - zs[k];
        out[k] = f(dx * dx + dy * dy + dz * dz);
    }
}

#[inline(always)]
fn row_dot_impl<F: Fn(f64) -> f64>(f: F, t: Point3, src: &Coords, range: Range<usize>, w: &[f64]) -> f64 {
    let xs = &src.x[range.clone()];
    let ys = &src.y[range.clone()];
    let zs = &src.z[range];
    let n = xs.len();
    let w = &w[..n];
    let mut acc = [0.0f64; 4];
    let head = n - n % 4;
    let mut k = 0;
    while k < head {
        for (lane, a) in acc.iter_mut().enumerate() {
            let j = k + lane;
            let dx = t.x - xs[j];
            let dy = t.y - ys[j];
            let dz = t.z - zs[j];
            *a += f(dx * dx + dy * dy + dz * dz) * w[j];
        }
        k += 4;
    }
    for j in head..n {
        let dx = t.x - xs[j];
        let dy = t.y - ys[j];
        let dz = t.z - zs[j];
        acc[0] += f(dx * dx + dy * dy + dz * dz) * w[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline(always)]
fn col_axpy_impl<F: Fn(f64) -> f64>(f: F, s: Point3, dst: &Coords, range: Range<usize>, alpha: f64, y: &mut [f64]) {
    let xs = &dst.x[range.clone()];
    let ys = &dst.y[range.clone()];
    let zs = &dst.z[range];
    let y = &mut y[..xs.len()];
    for k in 0..xs.len() {
        let dx = xs[k] - s.x;
        let dy = ys[k] - s.y;
        let dz = zs[k] - s.z;
        y[k] += alpha * f(dx * dx + dy * dy + dz * dz);
    }
}

/// Structure-of-arrays coordinates, the layout the block primitives read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Coords {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Coords {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut c = Coords::default();
        for p in points {
            c.x.push(p.x);
            c.y.push(p.y);
            c.z.push(p.z);
        }
        c
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point3 {
        Point3::new(self.x[i], self.y[i], self.z[i])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Entry `(i, j)` of the kernel matrix over `pts`.
pub fn eval_entry(kernel: &KernelSpec, pts: &PointSet, i: usize, j: usize) -> Result<f64> {
    let n = pts.len();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "entry ({i}, {j}) out of range for {n} points"
        )));
    }
    if i == j {
        return Ok(kernel.diagonal.value());
    }
    let (a, b) = (pts.points()[i], pts.points()[j]);
    let r2 = a.dist2(&b);
    if r2.sqrt() < MIN_SEPARATION {
        return Err(Error::DegenerateGeometry {
            i,
            j,
            distance: r2.sqrt(),
        });
    }
    let v = kernel.radial_r2(r2);
    if !v.is_finite() {
        return Err(Error::DegenerateGeometry {
            i,
            j,
            distance: r2.sqrt(),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(d: f64) -> PointSet {
        PointSet::from_points(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(d, 0.0, 0.0)])
    }

    #[test]
    fn diagonal_is_zero() {
        let pts = pair(2.0);
        assert_eq!(eval_entry(&KernelSpec::laplace3d(), &pts, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn laplace_at_distance_two() {
        let pts = pair(2.0);
        assert_eq!(eval_entry(&KernelSpec::laplace3d(), &pts, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn helmholtz_at_pi() {
        let pts = pair(std::f64::consts::PI);
        let v = eval_entry(&KernelSpec::helmholtz_re(), &pts, 0, 1).unwrap();
        assert!((v + 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn inverse_quartic_value() {
        let pts = pair(2.0);
        assert_eq!(
            eval_entry(&KernelSpec::inverse_quartic(), &pts, 0, 1).unwrap(),
            1.0 / 16.0
        );
    }

    #[test]
    fn custom_diagonal_value() {
        let k = KernelSpec::custom("exp", |r: f64| (-r).exp()).with_diagonal(DiagonalRule::Value(3.0));
        let pts = pair(1.0);
        assert_eq!(eval_entry(&k, &pts, 0, 0).unwrap(), 3.0);
        assert!((eval_entry(&k, &pts, 0, 1).unwrap() - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn coincident_points_are_rejected() {
        let pts = pair(0.0);
        let err = eval_entry(&KernelSpec::laplace3d(), &pts, 0, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { .. }));
        assert!(pts.check_distinct().is_err());
        assert!(pair(1e-3).check_distinct().is_ok());
    }

    #[test]
    fn out_of_range_entry() {
        assert!(eval_entry(&KernelSpec::laplace3d(), &pair(1.0), 0, 2).is_err());
    }

    #[test]
    fn tensor_grid_of_eight() {
        let pts = generate_points(Distribution::TensorGrid, 8, 99).unwrap();
        let mut got: Vec<_> = pts.points().iter().map(|p| (p.x, p.y, p.z)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = vec![];
        for &x in &[-0.5, 0.5] {
            for &y in &[-0.5, 0.5] {
                for &z in &[-0.5, 0.5] {
                    want.push((x, y, z));
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn tensor_grid_rejects_non_cube() {
        assert!(generate_points(Distribution::TensorGrid, 9, 0).is_err());
        assert!(generate_points(Distribution::UniformRandom, 0, 0).is_err());
    }

    #[test]
    fn uniform_is_reproducible() {
        let a = generate_points(Distribution::UniformRandom, 1000, 42).unwrap();
        let b = generate_points(Distribution::UniformRandom, 1000, 42).unwrap();
        let c = generate_points(Distribution::UniformRandom, 1000, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .points()
            .iter()
            .all(|p| [p.x, p.y, p.z].iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn uniform_mean_is_centred() {
        // Var of U(-1,1) is 1/3, so 3 sigma of the mean over 1e5 draws is ~0.0055.
        let pts = generate_points(Distribution::UniformRandom, 100_000, 7).unwrap();
        let n = pts.len() as f64;
        let mean = |f: fn(&Point3) -> f64| pts.points().iter().map(f).sum::<f64>() / n;
        for m in [mean(|p| p.x), mean(|p| p.y), mean(|p| p.z)] {
            assert!(m.abs() < 0.02, "mean {m}");
        }
    }

    #[test]
    fn block_primitives_agree_with_scalar() {
        let pts = generate_points(Distribution::UniformRandom, 37, 3).unwrap();
        let coords = Coords::from_points(pts.points());
        let t = Point3::new(3.0, -2.0, 0.5);
        let w: Vec<f64> = (0..37).map(|k| (k as f64).sin()).collect();
        for kernel in [
            KernelSpec::laplace3d(),
            KernelSpec::inverse_quartic(),
            KernelSpec::helmholtz_re(),
        ] {
            let mut row = vec![0.0; 37];
            kernel.fill_row(t, &coords, 0..37, &mut row);
            for (k, p) in pts.points().iter().enumerate() {
                assert_eq!(row[k], kernel.radial_r2(t.dist2(p)));
            }
            let dot: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((kernel.row_dot(t, &coords, 0..37, &w) - dot).abs() < 1e-12 * dot.abs().max(1.0));
            let mut y = vec![1.0; 37];
            kernel.col_axpy(t, &coords, 0..37, 2.0, &mut y);
            for k in 0..37 {
                assert!((y[k] - (1.0 + 2.0 * row[k])).abs() < 1e-14 * y[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn kernel_names_round_trip() {
        for name in ["laplace3d", "r4", "helmholtz-re"] {
            assert_eq!(name.parse::<KernelSpec>().unwrap().name(), name);
        }
        assert!("yukawa".parse::<KernelSpec>().is_err());
    }
}
