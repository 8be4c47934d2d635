//! Numerical rank of the interaction between a unit cube and its
//! well-separated, face-, edge- and vertex-sharing neighbours.

use nalgebra::DMatrix;

use super::rank::{decay_index, rank_from_singular_values, singular_values};
use crate::error::{Error, Result};
use crate::kernel::{generate_points, Distribution, KernelSpec, Point3};
use crate::octree::AdmissibilityClass;

/// The four neighbour classes studied, in the order reported.
pub const STUDY_CLASSES: [AdmissibilityClass; 4] = [
    AdmissibilityClass::WellSeparated,
    AdmissibilityClass::Face,
    AdmissibilityClass::Edge,
    AdmissibilityClass::Vertex,
];

/// Threshold used for [`ClassRank::decay_index`].
pub const DECAY_THRESHOLD: f64 = 1e-6;

/// Offset of the neighbour cube from the unit cube `[0,1]^3`.
pub fn neighbour_offset(class: AdmissibilityClass) -> Point3 {
    match class {
        AdmissibilityClass::WellSeparated => Point3::new(-2.0, 0.0, 0.0),
        AdmissibilityClass::Face => Point3::new(-1.0, 0.0, 0.0),
        AdmissibilityClass::Edge => Point3::new(1.0, 0.0, 1.0),
        AdmissibilityClass::Vertex => Point3::new(1.0, 1.0, 1.0),
        AdmissibilityClass::SelfBlock => Point3::new(0.0, 0.0, 0.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRank {
    pub class: AdmissibilityClass,
    pub rank: usize,
    /// Index at which `s_i / s_1` first drops below [`DECAY_THRESHOLD`].
    pub decay_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankStudyPoint {
    pub n: usize,
    pub ranks: Vec<ClassRank>,
}

impl RankStudyPoint {
    pub fn rank(&self, class: AdmissibilityClass) -> Option<usize> {
        self.ranks.iter().find(|r| r.class == class).map(|r| r.rank)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankStudyResult {
    pub kernel: String,
    pub epsilon: f64,
    pub seed: u64,
    pub points: Vec<RankStudyPoint>,
    /// Least-squares slope of `log(rank)` against `log(N)` per class.
    pub slopes: Vec<(AdmissibilityClass, f64)>,
}

impl RankStudyResult {
    pub fn slope(&self, class: AdmissibilityClass) -> Option<f64> {
        self.slopes.iter().find(|s| s.0 == class).map(|s| s.1)
    }
}

/// Ranks of the four neighbour blocks for `n_per_cube` random points in
/// each cube.
pub fn rank_study(kernel: &KernelSpec, n_per_cube: usize, eps: f64, seed: u64) -> Result<RankStudyPoint> {
    if n_per_cube < 8 {
        return Err(Error::InvalidArgument(format!(
            "rank study needs at least 8 points per cube, got {n_per_cube}"
        )));
    }
    let raw = generate_points(Distribution::UniformRandom, 5 * n_per_cube, seed)?;
    let unit: Vec<Point3> = raw
        .points()
        .iter()
        .map(|p| Point3::new(0.5 * (p.x + 1.0), 0.5 * (p.y + 1.0), 0.5 * (p.z + 1.0)))
        .collect();
    let (x, rest) = unit.split_at(n_per_cube);
    let mut ranks = Vec::with_capacity(4);
    for (k, &class) in STUDY_CLASSES.iter().enumerate() {
        let off = neighbour_offset(class);
        let y: Vec<Point3> = rest[k * n_per_cube..(k + 1) * n_per_cube]
            .iter()
            .map(|p| p.translated(off))
            .collect();
        let m = DMatrix::from_fn(n_per_cube, n_per_cube, |i, j| kernel.radial_r2(x[i].dist2(&y[j])));
        let sv = singular_values(&m);
        ranks.push(ClassRank {
            class,
            rank: rank_from_singular_values(&sv, eps),
            decay_index: decay_index(&sv, DECAY_THRESHOLD),
        });
    }
    Ok(RankStudyPoint { n: n_per_cube, ranks })
}

/// Runs [`rank_study`] for every `N` in `sizes` and fits log-log slopes.
pub fn rank_sweep(kernel: &KernelSpec, sizes: &[usize], eps: f64, seed: u64) -> Result<RankStudyResult> {
    let points = sizes
        .iter()
        .map(|&n| rank_study(kernel, n, eps, seed))
        .collect::<Result<Vec<_>>>()?;
    let slopes = STUDY_CLASSES
        .iter()
        .map(|&class| {
            let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
            let ys: Vec<f64> = points
                .iter()
                .map(|p| p.rank(class).unwrap_or(0).max(1) as f64)
                .collect();
            (class, loglog_slope(&xs, &ys))
        })
        .collect();
    Ok(RankStudyResult {
        kernel: kernel.name().to_string(),
        epsilon: eps,
        seed,
        points,
        slopes,
    })
}

/// Least-squares slope of `ln y` against `ln x`; NaN with fewer than two
/// distinct abscissae.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}
