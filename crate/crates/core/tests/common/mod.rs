#![allow(dead_code)]

use hodlr3d::lowrank::neighbour_offset;
use hodlr3d::{generate_points, AdmissibilityClass, Coords, Distribution, KernelSpec, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `m` points in `[0, 1]^3` followed by `n` points in the neighbour cube of
/// the given class.
pub fn cube_pair(class: AdmissibilityClass, m: usize, n: usize, seed: u64) -> Coords {
    let raw = generate_points(Distribution::UniformRandom, m + n, seed).unwrap();
    let off = neighbour_offset(class);
    let pts: Vec<Point3> = raw
        .points()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let q = Point3::new(0.5 * (p.x + 1.0), 0.5 * (p.y + 1.0), 0.5 * (p.z + 1.0));
            if k < m {
                q
            } else {
                q.translated(off)
            }
        })
        .collect();
    Coords::from_points(&pts)
}

/// Row-major `K(rows, cols)` evaluated entry by entry.
pub fn dense_block(
    kernel: &KernelSpec,
    c: &Coords,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for i in rows {
        for j in cols.clone() {
            out.push(kernel.radial(c.point(i).dist(&c.point(j))));
        }
    }
    out
}

pub fn frobenius_rel(approx: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn kernels() -> [KernelSpec; 3] {
    [
        KernelSpec::laplace3d(),
        KernelSpec::inverse_quartic(),
        KernelSpec::helmholtz_re(),
    ]
}
