//! Partially pivoted adaptive cross approximation with pivot-only storage.
//!
//! A compressed block keeps the row pivots `sigma`, the column pivots `tau`
//! and the LU factors of the pivot submatrix `K(sigma, tau)`. The
//! approximant is `K(X, tau) K(sigma, tau)^{-1} K(sigma, Y)`; the two large
//! factors are regenerated from the kernel on every application.

use std::ops::Range;
use std::time::{Duration, Instant};

use crate::error::{check_len, Error, Result};
use crate::kernel::{Coords, KernelSpec};

/// Pivot magnitude below which elimination stops.
pub const PIVOT_FLOOR: f64 = 1e-30;

/// Row/column access to a matrix block.
pub trait BlockEntries {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Writes row `i` into `out[..ncols]`.
    fn row(&self, i: usize, out: &mut [f64]);
    /// Writes column `j` into `out[..nrows]`.
    fn col(&self, j: usize, out: &mut [f64]);

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.ncols()];
        self.row(i, &mut buf);
        buf.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn col_axpy(&self, j: usize, alpha: f64, y: &mut [f64]) {
        let mut buf = vec![0.0; self.nrows()];
        self.col(j, &mut buf);
        for (yi, b) in y.iter_mut().zip(&buf) {
            *yi += alpha * b;
        }
    }
}

/// A block defined by an entry function `f(i, j)`.
pub struct FnBlock<F> {
    rows: usize,
    cols: usize,
    f: F,
}

impl<F: Fn(usize, usize) -> f64> FnBlock<F> {
    pub fn new(rows: usize, cols: usize, f: F) -> Self {
        Self { rows, cols, f }
    }
}

impl<F: Fn(usize, usize) -> f64> BlockEntries for FnBlock<F> {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn row(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out[..self.cols].iter_mut().enumerate() {
            *o = (self.f)(i, j);
        }
    }
    fn col(&self, j: usize, out: &mut [f64]) {
        for (i, o) in out[..self.rows].iter_mut().enumerate() {
            *o = (self.f)(i, j);
        }
    }
}

/// The kernel block between two disjoint ranges of tree-ordered particles.
pub struct KernelBlock<'a> {
    pub kernel: &'a KernelSpec,
    pub coords: &'a Coords,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl<'a> KernelBlock<'a> {
    pub fn new(kernel: &'a KernelSpec, coords: &'a Coords, rows: Range<usize>, cols: Range<usize>) -> Self {
        debug_assert!(rows.end <= cols.start || cols.end <= rows.start);
        Self {
            kernel,
            coords,
            rows,
            cols,
        }
    }
}

impl BlockEntries for KernelBlock<'_> {
    fn nrows(&self) -> usize {
        self.rows.len()
    }
    fn ncols(&self) -> usize {
        self.cols.len()
    }
    fn row(&self, i: usize, out: &mut [f64]) {
        let t = self.coords.point(self.rows.start + i);
        self.kernel.fill_row(t, self.coords, self.cols.clone(), out);
    }
    fn col(&self, j: usize, out: &mut [f64]) {
        let s = self.coords.point(self.cols.start + j);
        self.kernel.fill_row(s, self.coords, self.rows.clone(), out);
    }
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let t = self.coords.point(self.rows.start + i);
        self.kernel.row_dot(t, self.coords, self.cols.clone(), x)
    }
    fn col_axpy(&self, j: usize, alpha: f64, y: &mut [f64]) {
        let s = self.coords.point(self.cols.start + j);
        self.kernel.col_axpy(s, self.coords, self.rows.clone(), alpha, y);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcaOptions {
    /// Relative tolerance on the Frobenius norm of the approximant.
    pub tolerance: f64,
    /// Rank cap; `None` means `min(|X|, |Y|)`.
    pub max_rank: Option<usize>,
    /// Also factor `K(sigma, tau)` independently and record the largest
    /// deviation from the elimination byproduct.
    pub cross_check: bool,
    /// Abort with [`Error::DeadlineExceeded`] once this instant passes.
    pub deadline: Option<Deadline>,
}

/// A wall-clock cut-off and the instant the budget started.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deadline {
    pub start: Instant,
    pub end: Instant,
}

impl Deadline {
    pub fn after(budget: Duration) -> Self {
        let start = Instant::now();
        Self {
            start,
            end: start + budget,
        }
    }

    pub fn check(&self) -> Result<()> {
        let now = Instant::now();
        if now > self.end {
            Err(Error::DeadlineExceeded {
                elapsed_s: (now - self.start).as_secs_f64(),
            })
        } else {
            Ok(())
        }
    }
}

impl AcaOptions {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            max_rank: None,
            cross_check: false,
            deadline: None,
        }
    }
}

/// A compressed block: pivots plus the packed LU factors of the pivot
/// submatrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankBlock {
    rows: Vec<u32>,
    cols: Vec<u32>,
    /// Row-major `r x r`: strictly lower part holds `L` (unit diagonal
    /// implied), the rest holds `R`.
    lu: Vec<f64>,
    factor_mismatch: Option<f64>,
}

impl LowRankBlock {
    pub fn empty() -> Self {
        Self {
            rows: Vec::new(),
            cols: Vec::new(),
            lu: Vec::new(),
            factor_mismatch: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Row pivots, local to the block.
    pub fn row_pivots(&self) -> &[u32] {
        &self.rows
    }

    /// Column pivots, local to the block.
    pub fn col_pivots(&self) -> &[u32] {
        &self.cols
    }

    /// Floats kept between applications (`r^2`).
    pub fn stored_floats(&self) -> usize {
        self.lu.len()
    }

    /// Unit lower-triangular factor, row-major.
    pub fn lower(&self) -> Vec<f64> {
        let r = self.rank();
        let mut l = vec![0.0; r * r];
        for a in 0..r {
            l[a * r + a] = 1.0;
            l[a * r..a * r + a].copy_from_slice(&self.lu[a * r..a * r + a]);
        }
        l
    }

    /// Upper-triangular factor, row-major.
    pub fn upper(&self) -> Vec<f64> {
        let r = self.rank();
        let mut u = vec![0.0; r * r];
        for a in 0..r {
            u[a * r + a..(a + 1) * r].copy_from_slice(&self.lu[a * r + a..(a + 1) * r]);
        }
        u
    }

    /// Largest absolute difference between the elimination factors and an
    /// independent LU of the pivot submatrix, when requested.
    pub fn factor_mismatch(&self) -> Option<f64> {
        self.factor_mismatch
    }

    /// Solves `K(sigma, tau) z = b` in place.
    pub fn solve_pivot_system(&self, b: &mut [f64]) {
        let r = self.rank();
        let lu = &self.lu;
        for a in 0..r {
            let row = &lu[a * r..a * r + a];
            let s: f64 = row.iter().zip(&b[..a]).map(|(l, z)| l * z).sum();
            b[a] -= s;
        }
        for a in (0..r).rev() {
            let row = &lu[a * r + a + 1..(a + 1) * r];
            let s: f64 = row.iter().zip(&b[a + 1..r]).map(|(u, z)| u * z).sum();
            b[a] = (b[a] - s) / lu[a * r + a];
        }
    }

    /// `K(sigma, Y) x`, the first stage of an application.
    pub fn gather_pivot_rows(&self, entries: &impl BlockEntries, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&i| entries.row_dot(i as usize, x)).collect()
    }

    /// `y += K(X, tau) z`, the last stage of an application.
    pub fn scatter_pivot_cols(&self, entries: &impl BlockEntries, z: &[f64], y: &mut [f64]) {
        for (&j, &zj) in self.cols.iter().zip(z) {
            if zj != 0.0 {
                entries.col_axpy(j as usize, zj, y);
            }
        }
    }

    /// `y += K(X, tau) K(sigma, tau)^{-1} K(sigma, Y) x`.
    pub fn apply_add(&self, entries: &impl BlockEntries, x: &[f64], y: &mut [f64]) {
        if self.rank() == 0 {
            return;
        }
        let mut z = self.gather_pivot_rows(entries, x);
        self.solve_pivot_system(&mut z);
        self.scatter_pivot_cols(entries, &z, y);
    }

    /// Solves `K(sigma, tau)^T z = b` in place.
    pub fn solve_pivot_system_transposed(&self, b: &mut [f64]) {
        let r = self.rank();
        let lu = &self.lu;
        // R^T w = b, column-oriented so rows of R are read contiguously.
        for a in 0..r {
            b[a] /= lu[a * r + a];
            let w = b[a];
            for (bc, u) in b[a + 1..r].iter_mut().zip(&lu[a * r + a + 1..(a + 1) * r]) {
                *bc -= u * w;
            }
        }
        // L^T z = w
        for a in (0..r).rev() {
            let z = b[a];
            for (bc, l) in b[..a].iter_mut().zip(&lu[a * r..a * r + a]) {
                *bc -= l * z;
            }
        }
    }

    /// `y += K~^T x` where `entries` describes the transposed block
    /// `K(Y, X)` of the one this block was compressed from.
    pub fn apply_transpose_add(&self, entries: &impl BlockEntries, x: &[f64], y: &mut [f64]) {
        if self.rank() == 0 {
            return;
        }
        let mut z: Vec<f64> = self.cols.iter().map(|&j| entries.row_dot(j as usize, x)).collect();
        self.solve_pivot_system_transposed(&mut z);
        for (&i, &zi) in self.rows.iter().zip(&z) {
            if zi != 0.0 {
                entries.col_axpy(i as usize, zi, y);
            }
        }
    }

    /// Entry `a` of the first application stage, `K(sigma_a, Y) x`, or of its
    /// transposed counterpart `K(tau_a, X) x` when `transposed`.
    pub fn gather_one(&self, entries: &impl BlockEntries, a: usize, x: &[f64], transposed: bool) -> f64 {
        let i = if transposed { self.cols[a] } else { self.rows[a] };
        entries.row_dot(i as usize, x)
    }

    /// Adds `z_a` times pivot column `a` (`K(X, tau_a)`, or `K(Y, sigma_a)`
    /// when `transposed`) into `y`.
    pub fn scatter_one(&self, entries: &impl BlockEntries, a: usize, z: f64, y: &mut [f64], transposed: bool) {
        let j = if transposed { self.rows[a] } else { self.cols[a] };
        if z != 0.0 {
            entries.col_axpy(j as usize, z, y);
        }
    }

    /// Solves with the pivot submatrix or its transpose.
    pub fn solve(&self, z: &mut [f64], transposed: bool) {
        if transposed {
            self.solve_pivot_system_transposed(z);
        } else {
            self.solve_pivot_system(z);
        }
    }

    /// The approximant as a dense row-major matrix.
    pub fn to_dense(&self, entries: &impl BlockEntries) -> Vec<f64> {
        let (m, n, r) = (entries.nrows(), entries.ncols(), self.rank());
        let mut out = vec![0.0; m * n];
        if r == 0 {
            return out;
        }
        // W = K(sigma,tau)^{-1} K(sigma, Y), r x n
        let mut w = vec![0.0; r * n];
        let mut row = vec![0.0; n];
        for (a, &i) in self.rows.iter().enumerate() {
            entries.row(i as usize, &mut row);
            w[a * n..(a + 1) * n].copy_from_slice(&row);
        }
        let mut colv = vec![0.0; r];
        for j in 0..n {
            for a in 0..r {
                colv[a] = w[a * n + j];
            }
            self.solve_pivot_system(&mut colv);
            for a in 0..r {
                w[a * n + j] = colv[a];
            }
        }
        let mut col = vec![0.0; m];
        for (a, &j) in self.cols.iter().enumerate() {
            entries.col(j as usize, &mut col);
            for i in 0..m {
                let c = col[i];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, wv) in dst.iter_mut().zip(&w[a * n..(a + 1) * n]) {
                    *d += c * wv;
                }
            }
        }
        out
    }
}

/// Compresses `entries` to relative tolerance `opts.tolerance`.
///
/// Elimination starts at row 0. Each step takes the residual row at the
/// current row pivot, chooses the column of largest residual magnitude, and
/// moves to the row of largest magnitude in the new residual column. It
/// stops before adding a term `u v^T` with
/// `|u| |v| <= eps |S|_F`, where `S` is the approximant including that term.
pub fn aca_compress(entries: &impl BlockEntries, opts: &AcaOptions) -> Result<LowRankBlock> {
    let (m, n) = (entries.nrows(), entries.ncols());
    if opts.tolerance.is_nan() || opts.tolerance <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ACA tolerance must be positive, got {}",
            opts.tolerance
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("ACA needs a non-empty block".into()));
    }
    let kmax = m.min(n).min(opts.max_rank.unwrap_or(usize::MAX));
    let eps2 = opts.tolerance * opts.tolerance;

    let mut us: Vec<f64> = Vec::new();
    let mut vs: Vec<f64> = Vec::new();
    // Gram matrices of the kept u and v vectors, lower triangle by rows.
    let mut gram_u: Vec<Vec<f64>> = Vec::new();
    let mut gram_v: Vec<Vec<f64>> = Vec::new();
    let mut rows: Vec<u32> = Vec::new();
    let mut cols: Vec<u32> = Vec::new();
    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    let mut row = vec![0.0; n];
    let mut col = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut coef = Vec::new();
    let mut raw_dots = Vec::new();
    let mut norm2 = 0.0;
    let mut next_row = Some(0usize);

    while rows.len() < kmax {
        let Some(i) = next_row else { break };
        if let Some(d) = &opts.deadline {
            d.check()?;
        }
        let k = rows.len();
        row_used[i] = true;
        entries.row(i, &mut row);
        // One pass over the kept v's forms the residual row and the dots
        // v_t . row needed for the norm update.
        v.copy_from_slice(&row);
        coef.clear();
        coef.extend((0..k).map(|t| us[t * m + i]));
        raw_dots.clear();
        for t in 0..k {
            raw_dots.push(dot_and_axpy(&vs[t * n..(t + 1) * n], &row, -coef[t], &mut v));
        }
        let pivot = argmax_abs(&v, &col_used);
        let Some(j) = pivot.filter(|&j| v[j].abs() >= PIVOT_FLOOR) else {
            if k == 0 {
                // An all-zero row says nothing yet; keep scanning rows.
                next_row = row_used.iter().position(|used| !used);
                continue;
            }
            break;
        };
        let delta = v[j];
        let inv = 1.0 / delta;
        v.iter_mut().for_each(|x| *x *= inv);
        // v_t . v = (v_t . row - sum_s c_s v_t . v_s) / delta
        let vdots: Vec<f64> = (0..k)
            .map(|t| (raw_dots[t] - gram_dot(&gram_v, t, &coef)) * inv)
            .collect();

        col_used[j] = true;
        entries.col(j, &mut col);
        u.copy_from_slice(&col);
        coef.clear();
        coef.extend((0..k).map(|t| vs[t * n + j]));
        raw_dots.clear();
        for t in 0..k {
            raw_dots.push(dot_and_axpy(&us[t * m..(t + 1) * m], &col, -coef[t], &mut u));
        }
        let udots: Vec<f64> = (0..k).map(|t| raw_dots[t] - gram_dot(&gram_u, t, &coef)).collect();

        let uu = dot(&u, &u);
        let vv = dot(&v, &v);
        let cross: f64 = udots.iter().zip(&vdots).map(|(a, b)| a * b).sum();
        let new_norm2 = norm2 + 2.0 * cross + uu * vv;
        if uu * vv <= eps2 * new_norm2 {
            break;
        }
        norm2 = new_norm2;
        us.extend_from_slice(&u);
        vs.extend_from_slice(&v);
        let mut gu = udots;
        gu.push(uu);
        gram_u.push(gu);
        let mut gv = vdots;
        gv.push(vv);
        gram_v.push(gv);
        rows.push(i as u32);
        cols.push(j as u32);
        next_row = argmax_abs(&u, &row_used);
    }

    let r = rows.len();
    let mut lu = vec![0.0; r * r];
    for a in 0..r {
        let sa = rows[a] as usize;
        let da = us[a * m + sa];
        for b in 0..a {
            // L = U~ D^{-1}: U~[a][b] = u_b(sigma_a)
            lu[a * r + b] = us[b * m + sa] / us[b * m + rows[b] as usize];
        }
        for b in a..r {
            // R = D V~^T: R[a][b] = delta_a v_a(tau_b)
            lu[a * r + b] = da * vs[a * n + cols[b] as usize];
        }
    }
    let mut block = LowRankBlock {
        rows,
        cols,
        lu,
        factor_mismatch: None,
    };
    if opts.cross_check {
        let independent = independent_lu(entries, &block.rows, &block.cols);
        let mismatch = independent
            .iter()
            .zip(&block.lu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        block.factor_mismatch = Some(mismatch);
    }
    Ok(block)
}

/// Doolittle LU of `K(rows, cols)` without pivoting, packed like
/// [`LowRankBlock`]'s factors.
pub fn independent_lu(entries: &impl BlockEntries, rows: &[u32], cols: &[u32]) -> Vec<f64> {
    let r = rows.len();
    let mut a = vec![0.0; r * r];
    let mut buf = vec![0.0; entries.ncols()];
    for (p, &i) in rows.iter().enumerate() {
        entries.row(i as usize, &mut buf);
        for (q, &j) in cols.iter().enumerate() {
            a[p * r + q] = buf[j as usize];
        }
    }
    for k in 0..r {
        let piv = a[k * r + k];
        for i in k + 1..r {
            let f = a[i * r + k] / piv;
            a[i * r + k] = f;
            for j in k + 1..r {
                a[i * r + j] -= f * a[k * r + j];
            }
        }
    }
    a
}

/// `y += K~ x` for a block compressed from `entries`. A rank-0 block adds
/// nothing.
pub fn lr_apply(block: &LowRankBlock, entries: &impl BlockEntries, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(entries.ncols(), x.len())?;
    check_len(entries.nrows(), y.len())?;
    block.apply_add(entries, x, y);
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let head = n - n % 4;
    let mut k = 0;
    while k < head {
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
        k += 4;
    }
    for j in head..n {
        acc[0] += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Returns `x . w` and performs `y += alpha x` in the same sweep over `x`.
#[inline]
fn dot_and_axpy(x: &[f64], w: &[f64], alpha: f64, y: &mut [f64]) -> f64 {
    let n = x.len();
    let (w, y) = (&w[..n], &mut y[..n]);
    let mut acc = [0.0f64; 4];
    let head = n - n % 4;
    let mut k = 0;
    while k < head {
        for lane in 0..4 {
            acc[lane] += x[k + lane] * w[k + lane];
            y[k + lane] += alpha * x[k + lane];
        }
        k += 4;
    }
    for j in head..n {
        acc[0] += x[j] * w[j];
        y[j] += alpha * x[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `sum_s c_s G[t][s]` for the symmetric matrix stored as lower-triangle rows.
fn gram_dot(gram: &[Vec<f64>], t: usize, c: &[f64]) -> f64 {
    let mut s: f64 = gram[t].iter().zip(c).map(|(g, c)| g * c).sum();
    for (q, cq) in c.iter().enumerate().skip(t + 1) {
        s += gram[q][t] * cq;
    }
    s
}

fn argmax_abs(v: &[f64], used: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (&x, &u)) in v.iter().zip(used).enumerate() {
        if !u && best.map_or(true, |(_, b)| x.abs() > b) {
            best = Some((k, x.abs()));
        }
    }
    best.map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_of(e: &impl BlockEntries) -> Vec<f64> {
        let (m, n) = (e.nrows(), e.ncols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            e.row(i, &mut out[i * n..(i + 1) * n]);
        }
        out
    }

    fn frob(a: &[f64]) -> f64 {
        a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn outer_product_is_rank_one() {
        let u: Vec<f64> = (0..30).map(|i| 1.0 + i as f64).collect();
        let v: Vec<f64> = (0..20).map(|j| (j as f64 * 0.3).cos()).collect();
        let e = FnBlock::new(30, 20, |i, j| u[i] * v[j]);
        for eps in [1e-3, 1e-8, 1e-14] {
            let b = aca_compress(&e, &AcaOptions::new(eps)).unwrap();
            assert_eq!(b.rank(), 1);
        }
        let b = aca_compress(&e, &AcaOptions::new(1e-10)).unwrap();
        let x: Vec<f64> = (0..20).map(|j| j as f64 - 7.0).collect();
        let mut y = vec![0.0; 30];
        lr_apply(&b, &e, &x, &mut y).unwrap();
        let vx: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
        for i in 0..30 {
            assert!((y[i] - vx * u[i]).abs() < 1e-12 * (vx * u[i]).abs().max(1.0));
        }
    }

    #[test]
    fn zero_block_is_rank_zero() {
        let e = FnBlock::new(10, 12, |_, _| 0.0);
        let b = aca_compress(&e, &AcaOptions::new(1e-7)).unwrap();
        assert_eq!(b.rank(), 0);
        assert!(b.row_pivots().is_empty() && b.col_pivots().is_empty());
        let mut y = vec![0.0; 10];
        lr_apply(&b, &e, &[1.0; 12], &mut y).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_leading_rows_are_skipped() {
        let e = FnBlock::new(6, 6, |i, j| if i >= 4 { ((i + 1) * (j + 1)) as f64 } else { 0.0 });
        let b = aca_compress(&e, &AcaOptions::new(1e-12)).unwrap();
        assert_eq!(b.rank(), 1);
    }

    #[test]
    fn invalid_arguments() {
        let e = FnBlock::new(3, 3, |i, j| (i + j) as f64);
        assert!(aca_compress(&e, &AcaOptions::new(0.0)).is_err());
        assert!(aca_compress(&FnBlock::new(0, 3, |_, _| 1.0), &AcaOptions::new(1e-6)).is_err());
        let b = aca_compress(&e, &AcaOptions::new(1e-6)).unwrap();
        assert!(lr_apply(&b, &e, &[1.0; 2], &mut [0.0; 3]).is_err());
    }

    #[test]
    fn factors_reproduce_pivot_block() {
        let e = FnBlock::new(40, 35, |i, j| 1.0 / (1.0 + (i as f64 - j as f64 - 50.0).abs()));
        let mut opts = AcaOptions::new(1e-7);
        opts.cross_check = true;
        let b = aca_compress(&e, &opts).unwrap();
        let r = b.rank();
        assert!(r > 1);
        let (l, u) = (b.lower(), b.upper());
        let dense = dense_of(&e);
        let mut scale: f64 = 0.0;
        for a in 0..r {
            for c in 0..r {
                let prod: f64 = (0..r).map(|k| l[a * r + k] * u[k * r + c]).sum();
                let want = dense[b.row_pivots()[a] as usize * 35 + b.col_pivots()[c] as usize];
                scale = scale.max(want.abs());
                assert!((prod - want).abs() < 1e-12 * scale.max(1e-3), "{prod} vs {want}");
            }
        }
        assert!(b.factor_mismatch().unwrap() < 1e-8, "{:?} r={r}", b.factor_mismatch());
        assert_eq!(b.stored_floats(), r * r);
    }

    #[test]
    fn max_rank_caps_the_rank() {
        let e = FnBlock::new(20, 20, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut opts = AcaOptions::new(1e-10);
        opts.max_rank = Some(5);
        assert_eq!(aca_compress(&e, &opts).unwrap().rank(), 5);
    }

    #[test]
    fn smooth_block_reconstruction() {
        let e = FnBlock::new(60, 50, |i, j| {
            let x = i as f64 / 60.0;
            let y = 3.0 + j as f64 / 50.0;
            1.0 / (y - x)
        });
        let eps = 1e-9;
        let b = aca_compress(&e, &AcaOptions::new(eps)).unwrap();
        let approx = b.to_dense(&e);
        let exact = dense_of(&e);
        let diff: Vec<f64> = approx.iter().zip(&exact).map(|(a, b)| a - b).collect();
        assert!(frob(&diff) <= 10.0 * eps * frob(&exact));
    }
}
