//! Fixtures shared by the benchmarks.

use hodlr3d::{generate_points, Distribution, HMatrix, HMatrixOptions, KernelSpec, PointSet, Variant};

pub fn cloud(n: usize) -> PointSet {
    generate_points(Distribution::UniformRandom, n, 42).expect("n > 0")
}

pub fn vector(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect()
}

pub fn representation(n: usize, variant: Variant) -> HMatrix {
    HMatrix::new(&cloud(n), &KernelSpec::laplace3d(), &HMatrixOptions::new(variant)).expect("valid cloud")
}
