//! Collocation discretisation of a second-kind integral equation and an
//! unrestarted GMRES solver.
//!
//! The unknown is piecewise constant on the `n^3` cells of `[-1,1]^3` and
//! collocated at cell centres. Off-diagonal entries are `w K(x_i, x_j)` with
//! `w = h^3`, and the diagonal is `1 + \int_cell 1/|y - x_c| dy`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::hmatrix::{direct_matvec, relative_error, HMatrix, HMatrixOptions};
use crate::kernel::{generate_points, Distribution, KernelKind, KernelSpec, PointSet};
use crate::octree::Variant;

/// A square linear map.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
}

/// A dense row-major matrix as an operator.
pub struct DenseOperator {
    n: usize,
    a: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        check_len(n * n, a.len())?;
        Ok(Self { n, a })
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.n, x.len())?;
        check_len(self.n, y.len())?;
        for (row, yi) in self.a.chunks_exact(self.n).zip(y.iter_mut()) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.0, x.len())?;
        check_len(self.0, y.len())?;
        (self.1)(x, y);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresOptions {
    /// Target relative residual `|A x - f| / |f|`.
    pub tol: f64,
    /// Krylov dimension before a restart; `None` never restarts.
    pub restart: Option<usize>,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            restart: None,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual after each iteration, from the Givens recurrence.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Solves `A x = f` from `x = 0`. Hitting `max_iter` is not an error: the
/// best iterate is returned with `converged = false`.
pub fn gmres(op: &dyn LinearOperator, f: &[f64], opts: &GmresOptions) -> Result<GmresResult> {
    let n = op.dim();
    check_len(n, f.len())?;
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "GMRES tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let mut x = vec![0.0; n];
    let fnorm = norm(f);
    if fnorm == 0.0 {
        return Ok(GmresResult {
            x,
            iterations: 0,
            residuals: vec![0.0],
            converged: true,
        });
    }
    let restart = opts.restart.unwrap_or(opts.max_iter).max(1);
    let mut residuals = Vec::new();
    let mut iterations = 0;
    let mut r = f.to_vec();
    let mut w = vec![0.0; n];
    loop {
        let beta = norm(&r);
        if beta / fnorm < opts.tol {
            return Ok(GmresResult {
                x,
                iterations,
                residuals,
                converged: true,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Columns of the Hessenberg matrix after rotation, i.e. R.
        let mut hcols: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];
        let mut converged = false;
        for _ in 0..restart {
            if iterations == opts.max_iter {
                break;
            }
            let j = basis.len() - 1;
            op.apply(&basis[j], &mut w)?;
            let mut h = vec![0.0; j + 2];
            for (i, q) in basis.iter().enumerate() {
                h[i] = dot(&w, q);
                for (wk, qk) in w.iter_mut().zip(q) {
                    *wk -= h[i] * qk;
                }
            }
            let hn = norm(&w);
            h[j + 1] = hn;
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, b) = (h[i], h[i + 1]);
                h[i] = c * a + s * b;
                h[i + 1] = -s * a + c * b;
            }
            let (a, b) = (h[j], h[j + 1]);
            let rho = a.hypot(b);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b / rho) };
            h[j] = rho;
            h[j + 1] = 0.0;
            cs.push((c, s));
            g.push(-s * g[j]);
            g[j] *= c;
            // A zero new direction means the Krylov space is invariant and
            // the current iterate is exact.
            let breakdown = hn == 0.0;
            let next = if breakdown {
                vec![0.0; n]
            } else {
                w.iter().map(|v| v / hn).collect()
            };
            hcols.push(h);
            basis.push(next);
            iterations += 1;
            let rel = g[j + 1].abs() / fnorm;
            residuals.push(rel);
            if rel < opts.tol || breakdown {
                converged = true;
                break;
            }
        }
        // Back substitution for the Krylov coefficients.
        let k = hcols.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (jj, yj) in y.iter().enumerate().skip(i + 1) {
                s -= hcols[jj][i] * yj;
            }
            y[i] = if hcols[i][i] != 0.0 { s / hcols[i][i] } else { 0.0 };
        }
        for (q, yi) in basis.iter().zip(&y) {
            for (xk, qk) in x.iter_mut().zip(q) {
                *xk += yi * qk;
            }
        }
        if converged || iterations == opts.max_iter || k == 0 {
            return Ok(GmresResult {
                x,
                iterations,
                residuals,
                converged,
            });
        }
        op.apply(&x, &mut w)?;
        for ((ri, fi), wi) in r.iter_mut().zip(f).zip(&w) {
            *ri = fi - wi;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `J = \int_0^1 \int_0^1 (1 + s^2 + t^2)^{-1/2} ds dt` by composite
/// Gauss-Legendre on a uniform panel grid, doubling the grid until two
/// successive estimates differ by less than `tol`.
pub fn unit_square_integral(tol: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(8);
    let f = |s: f64, t: f64| 1.0 / (1.0 + s * s + t * t).sqrt();
    let estimate = |panels: usize| {
        let h = 1.0 / panels as f64;
        let mut sum = 0.0;
        for a in 0..panels {
            for b in 0..panels {
                for (xi, wi) in nodes.iter().zip(&weights) {
                    for (xj, wj) in nodes.iter().zip(&weights) {
                        let s = h * (a as f64 + 0.5 * (xi + 1.0));
                        let t = h * (b as f64 + 0.5 * (xj + 1.0));
                        sum += wi * wj * f(s, t);
                    }
                }
            }
        }
        sum * h * h / 4.0
    };
    let mut panels = 1;
    let mut prev = estimate(panels);
    loop {
        panels *= 2;
        let next = estimate(panels);
        if (next - prev).abs() < tol || panels >= 1 << 10 {
            return next;
        }
        prev = next;
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `\int_C 1/|y - c| dy` over a cube `C` of side `h` centred at `c`.
///
/// Splitting the cube into six pyramids with apex `c` reduces the integral
/// to `3 h^2 J`, with `J` from [`unit_square_integral`].
pub fn cell_self_integral(h: f64) -> f64 {
    3.0 * h * h * unit_square_integral(1e-12)
}

/// The collocation matrix `A = D + w K_off` with `D = 1 + I_cell`.
pub struct IEOperator {
    n: usize,
    w: f64,
    diagonal: f64,
    pts: PointSet,
    rep: HMatrix,
}

/// Builds the discrete operator on an `n^3` grid with the off-diagonal part
/// compressed by `variant` at tolerance `eps`.
pub fn discretize_ie(n: usize, kernel: &KernelSpec, eps: f64, variant: Variant) -> Result<IEOperator> {
    IEOperator::new(n, kernel, &HMatrixOptions::new(variant).tolerance(eps))
}

impl IEOperator {
    pub fn new(n: usize, kernel: &KernelSpec, opts: &HMatrixOptions) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid size must be at least 2, got {n}")));
        }
        if !matches!(kernel.kind, KernelKind::Laplace3d) {
            return Err(Error::UnsupportedKernel(format!(
                "no singular quadrature for `{}`; only laplace3d is supported",
                kernel.name()
            )));
        }
        let h = 2.0 / n as f64;
        let pts = generate_points(Distribution::TensorGrid, n * n * n, 0)?;
        let off = KernelSpec::laplace3d();
        let rep = HMatrix::new(&pts, &off, opts)?;
        Ok(Self {
            n,
            w: h * h * h,
            diagonal: 1.0 + cell_self_integral(h),
            pts,
            rep,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn cell_volume(&self) -> f64 {
        self.w
    }

    pub fn diagonal(&self) -> f64 {
        self.diagonal
    }

    pub fn points(&self) -> &PointSet {
        &self.pts
    }

    pub fn rep(&self) -> &HMatrix {
        &self.rep
    }

    /// `A x` with the off-diagonal part summed directly.
    pub fn apply_direct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let kx = direct_matvec(self.rep.kernel(), &self.pts, x)?;
        Ok(kx
            .iter()
            .zip(x)
            .map(|(k, xi)| self.diagonal * xi + self.w * k)
            .collect())
    }

    /// Row-major dense assembly, for small grids.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.pts.len();
        let p = self.pts.points();
        let k = self.rep.kernel();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = if i == j {
                    self.diagonal
                } else {
                    self.w * k.radial_r2(p[i].dist2(&p[j]))
                };
            }
        }
        a
    }
}

impl LinearOperator for IEOperator {
    fn dim(&self) -> usize {
        self.pts.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.dim(), y.len())?;
        let kx = self.rep.matvec(x)?;
        for ((yi, xi), ki) in y.iter_mut().zip(x).zip(&kx) {
            *yi = self.diagonal * xi + self.w * ki;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IeReport {
    pub variant: Variant,
    pub n: usize,
    pub num_points: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Last relative residual of the GMRES recurrence.
    pub residual: f64,
    /// `|A~ x - f| / |f|` recomputed with the hierarchical operator.
    pub true_residual: f64,
    pub init_s: f64,
    pub solve_s: f64,
    pub fwd_error: f64,
}

/// Manufactured-solution run: draw `sigma`, form `f = A sigma` with direct
/// summation, solve with the compressed operator and compare.
pub fn ie_experiment(n: usize, kernel: &KernelSpec, eps: f64, variant: Variant, seed: u64) -> Result<IeReport> {
    let t = Instant::now();
    let op = discretize_ie(n, kernel, eps, variant)?;
    let init_s = t.elapsed().as_secs_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = op.apply_direct(&sigma)?;
    let t = Instant::now();
    let sol = gmres(&op, &f, &GmresOptions::default())?;
    let solve_s = t.elapsed().as_secs_f64();
    let mut af = vec![0.0; op.dim()];
    op.apply(&sol.x, &mut af)?;
    Ok(IeReport {
        variant,
        n,
        num_points: op.dim(),
        epsilon: eps,
        seed,
        iterations: sol.iterations,
        converged: sol.converged,
        residual: sol.residuals.last().copied().unwrap_or(0.0),
        true_residual: relative_error(&af, &f),
        init_s,
        solve_s,
        fwd_error: relative_error(&sol.x, &sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_integral_matches_closed_form() {
        // 2 ln(1 + sqrt 3) - ln 2 - pi / 6, evaluated to 30 digits elsewhere.
        let j = 0.793_359_121_326_517_8;
        assert!((unit_square_integral(1e-13) - j).abs() < 1e-12);
        assert!((cell_self_integral(1.0) - 2.380_077_363_979_553_5).abs() < 1e-11);
    }

    #[test]
    fn identity_converges_in_one_step() {
        let op = (5usize, |x: &[f64], y: &mut [f64]| y.copy_from_slice(x));
        let f = [1.0, -2.0, 3.0, 0.5, 4.0];
        let r = gmres(&op, &f, &GmresOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        for (a, b) in r.x.iter().zip(&f) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_two_by_two() {
        let op = DenseOperator::new(2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let r = gmres(&op, &[2.0, 3.0], &GmresOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-10 && (r.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let op = DenseOperator::new(2, vec![2.0, 1.0, 0.0, 3.0]).unwrap();
        let r = gmres(&op, &[0.0, 0.0], &GmresOptions::default()).unwrap();
        assert!(r.converged && r.x == vec![0.0, 0.0]);
    }

    #[test]
    fn non_convergence_is_flagged() {
        // A cyclic shift needs n iterations; stop after 3.
        let n = 10;
        let op = (n, |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                y[(i + 1) % x.len()] = x[i];
            }
        });
        let mut f = vec![0.0; n];
        f[0] = 1.0;
        let opts = GmresOptions {
            max_iter: 3,
            ..Default::default()
        };
        let r = gmres(&op, &f, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn restarted_gmres_still_converges() {
        let n = 30;
        let a: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i == j {
                    4.0
                } else {
                    1.0 / (1.0 + (i as f64 - j as f64).abs()).powi(2)
                }
            })
            .collect();
        let op = DenseOperator::new(n, a).unwrap();
        let f: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let opts = GmresOptions {
            restart: Some(5),
            max_iter: 200,
            ..Default::default()
        };
        let r = gmres(&op, &f, &opts).unwrap();
        assert!(r.converged);
        let mut af = vec![0.0; n];
        op.apply(&r.x, &mut af).unwrap();
        assert!(relative_error(&af, &f) < 1e-9);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let sum: f64 = w.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
        let x14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((x14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn self_integral_scales_with_area() {
        let a = cell_self_integral(1.0);
        let b = cell_self_integral(0.5);
        assert!((a / 4.0 - b).abs() < 1e-14);
    }

    #[test]
    fn only_laplace_is_supported() {
        assert!(matches!(
            discretize_ie(4, &KernelSpec::inverse_quartic(), 1e-7, Variant::Hodlr3d),
            Err(Error::UnsupportedKernel(_))
        ));
        assert!(discretize_ie(1, &KernelSpec::laplace3d(), 1e-7, Variant::Hodlr3d).is_err());
    }
}
