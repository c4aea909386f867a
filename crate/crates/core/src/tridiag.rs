//! Tridiagonal linear algebra: complex Thomas elimination for the
//! Crank-Nicolson solves and real inverse iteration for ground states.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Twisted LU factors of a complex tridiagonal matrix with constant
/// off-diagonals.
///
/// Rows above the twist row are eliminated top-down and rows below it
/// bottom-up, so each sweep runs two independent recurrences side by side.
/// The factors are kept so repeated solves against a fixed matrix cost one
/// forward and one backward sweep.
#[derive(Debug, Clone, Default)]
pub struct ComplexTridiagonal {
    off: Complex64,
    inv_pivot: Vec<Complex64>,
    /// Eliminated coupling to the neighbour further from the twist row.
    coupling: Vec<Complex64>,
    twist: usize,
}

#[inline(always)]
fn checked_inv(pivot: Complex64, row: usize) -> Result<Complex64> {
    let inv = pivot.inv();
    if inv.re.is_finite() && inv.im.is_finite() {
        Ok(inv)
    } else {
        Err(Error::SolverBreakdown { row })
    }
}

impl ComplexTridiagonal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    fn resize(&mut self, n: usize, off: Complex64) {
        self.off = off;
        self.inv_pivot.resize(n, Complex64::new(0.0, 0.0));
        self.coupling.resize(n, Complex64::new(0.0, 0.0));
        self.twist = n.saturating_sub(1) / 2;
    }

    /// Factors the matrix with main diagonal `diag(i)` for `i < n` and both
    /// off-diagonals equal to `off`.
    pub fn factor(
        &mut self,
        n: usize,
        off: Complex64,
        diag: impl Fn(usize) -> Complex64,
    ) -> Result<()> {
        self.resize(n, off);
        if n == 0 {
            return Ok(());
        }
        let k = self.twist;
        let mut up = Complex64::new(0.0, 0.0);
        let mut down = Complex64::new(0.0, 0.0);
        for j in 0..k {
            let (top, bottom) = (j, n - 1 - j);
            let inv_t = checked_inv(diag(top) - off * up, top)?;
            let inv_b = checked_inv(diag(bottom) - off * down, bottom)?;
            up = off * inv_t;
            down = off * inv_b;
            self.inv_pivot[top] = inv_t;
            self.coupling[top] = up;
            self.inv_pivot[bottom] = inv_b;
            self.coupling[bottom] = down;
        }
        // Odd n leaves one extra bottom row before the twist.
        if n - k > k + 1 {
            let row = k + 1;
            let inv = checked_inv(diag(row) - off * down, row)?;
            down = off * inv;
            self.inv_pivot[row] = inv;
            self.coupling[row] = down;
        }
        self.inv_pivot[k] = checked_inv(diag(k) - off * (up + down), k)?;
        self.coupling[k] = Complex64::new(0.0, 0.0);
        Ok(())
    }

    /// Factors and solves in one pass; `rhs` holds the solution on return.
    /// Faster than [`factor`](Self::factor) followed by
    /// [`solve_in_place`](Self::solve_in_place) when the matrix changes every
    /// solve.
    pub fn factor_solve(
        &mut self,
        off: Complex64,
        diag: impl Fn(usize) -> Complex64,
        rhs: &mut [Complex64],
    ) -> Result<()> {
        let n = rhs.len();
        self.resize(n, off);
        if n == 0 {
            return Ok(());
        }
        let k = self.twist;
        let mut up = Complex64::new(0.0, 0.0);
        let mut down = Complex64::new(0.0, 0.0);
        let mut y_up = Complex64::new(0.0, 0.0);
        let mut y_down = Complex64::new(0.0, 0.0);
        for j in 0..k {
            let (top, bottom) = (j, n - 1 - j);
            let inv_t = checked_inv(diag(top) - off * up, top)?;
            let inv_b = checked_inv(diag(bottom) - off * down, bottom)?;
            up = off * inv_t;
            down = off * inv_b;
            y_up = (rhs[top] - off * y_up) * inv_t;
            y_down = (rhs[bottom] - off * y_down) * inv_b;
            self.inv_pivot[top] = inv_t;
            self.coupling[top] = up;
            self.inv_pivot[bottom] = inv_b;
            self.coupling[bottom] = down;
            rhs[top] = y_up;
            rhs[bottom] = y_down;
        }
        if n - k > k + 1 {
            let row = k + 1;
            let inv = checked_inv(diag(row) - off * down, row)?;
            down = off * inv;
            y_down = (rhs[row] - off * y_down) * inv;
            self.inv_pivot[row] = inv;
            self.coupling[row] = down;
            rhs[row] = y_down;
        }
        let inv_k = checked_inv(diag(k) - off * (up + down), k)?;
        self.inv_pivot[k] = inv_k;
        self.coupling[k] = Complex64::new(0.0, 0.0);
        rhs[k] = (rhs[k] - off * (y_up + y_down)) * inv_k;
        self.back_substitute(rhs);
        Ok(())
    }

    /// Solves in place with the stored factors; `rhs` holds the solution on
    /// return.
    pub fn solve_in_place(&self, rhs: &mut [Complex64]) {
        let n = self.inv_pivot.len();
        debug_assert_eq!(rhs.len(), n);
        if n == 0 {
            return;
        }
        let off = self.off;
        let k = self.twist;
        let mut y_up = Complex64::new(0.0, 0.0);
        let mut y_down = Complex64::new(0.0, 0.0);
        for j in 0..k {
            let (top, bottom) = (j, n - 1 - j);
            y_up = (rhs[top] - off * y_up) * self.inv_pivot[top];
            y_down = (rhs[bottom] - off * y_down) * self.inv_pivot[bottom];
            rhs[top] = y_up;
            rhs[bottom] = y_down;
        }
        if n - k > k + 1 {
            let row = k + 1;
            y_down = (rhs[row] - off * y_down) * self.inv_pivot[row];
            rhs[row] = y_down;
        }
        rhs[k] = (rhs[k] - off * (y_up + y_down)) * self.inv_pivot[k];
        self.back_substitute(rhs);
    }

    fn back_substitute(&self, x: &mut [Complex64]) {
        let n = x.len();
        let k = self.twist;
        let mut left = x[k];
        let mut right = x[k];
        for j in 1..=k {
            let (lo, hi) = (k - j, k + j);
            left = x[lo] - self.coupling[lo] * left;
            x[lo] = left;
            if hi < n {
                right = x[hi] - self.coupling[hi] * right;
                x[hi] = right;
            }
        }
        #[allow(clippy::needless_range_loop)]
        for hi in 2 * k + 1..n {
            right = x[hi] - self.coupling[hi] * right;
            x[hi] = right;
        }
    }
}

/// Solves a real tridiagonal system with constant off-diagonal `off`.
fn solve_real(diag: &[f64], off: f64, rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut upper = vec![0.0; n];
    let mut prev_upper = 0.0;
    let mut prev = 0.0;
    for i in 0..n {
        let pivot = diag[i] - off * prev_upper;
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SolverBreakdown { row: i });
        }
        prev_upper = off / pivot;
        upper[i] = prev_upper;
        prev = (rhs[i] - off * prev) / pivot;
        rhs[i] = prev;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        rhs[i] -= upper[i] * rhs[i + 1];
    }
    Ok(())
}

/// Periodic variant: `off` also couples the first and last rows.
/// Uses the Sherman-Morrison correction on top of [`solve_real`].
fn solve_cyclic_real(diag: &[f64], off: f64, rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    // A = B + u vᵀ with u = (g, 0, …, 0, off), v = (1, 0, …, 0, off/g).
    let g = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= g;
    b[n - 1] -= off * off / g;
    solve_real(&b, off, rhs)?;
    let mut z = vec![0.0; n];
    z[0] = g;
    z[n - 1] = off;
    solve_real(&b, off, &mut z)?;
    let vy = rhs[0] + off / g * rhs[n - 1];
    let vz = z[0] + off / g * z[n - 1];
    let factor = vy / (1.0 + vz);
    for (r, zi) in rhs.iter_mut().zip(&z) {
        *r -= factor * zi;
    }
    Ok(())
}

/// Symmetric tridiagonal operator `H = diag + off·(shift ± 1)`, optionally
/// with periodic corner couplings.
#[derive(Debug, Clone)]
pub struct SymmetricTridiagonal {
    pub diag: Vec<f64>,
    pub off: f64,
    pub periodic: bool,
}

impl SymmetricTridiagonal {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off * x[i - 1];
            } else if self.periodic {
                acc += self.off * x[n - 1];
            }
            if i + 1 < n {
                acc += self.off * x[i + 1];
            } else if self.periodic {
                acc += self.off * x[0];
            }
            out[i] = acc;
        }
    }

    fn solve_shifted(&self, shift: f64, rhs: &mut [f64]) -> Result<()> {
        let d: Vec<f64> = self.diag.iter().map(|x| x - shift).collect();
        if self.periodic {
            solve_cyclic_real(&d, self.off, rhs)
        } else {
            solve_real(&d, self.off, rhs)
        }
    }

    /// Gershgorin lower bound of the spectrum.
    pub fn lower_bound(&self) -> f64 {
        let min = self.diag.iter().cloned().fold(f64::INFINITY, f64::min);
        min - 2.0 * self.off.abs()
    }

    /// Lowest eigenpair by inverse iteration shifted below the spectrum.
    ///
    /// Returns the Rayleigh quotient and a unit-Euclidean-norm eigenvector
    /// with positive sum. Iterates until the residual `‖Hx - Ex‖` falls
    /// below `tol · max(1, |E|)`.
    pub fn lowest_eigenpair(
        &self,
        start: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let n = self.diag.len();
        let shift = self.lower_bound() - 1.0;
        let mut x = start.to_vec();
        let mut hx = vec![0.0; n];
        normalize(&mut x);
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            self.solve_shifted(shift, &mut x)?;
            normalize(&mut x);
            self.apply(&x, &mut hx);
            let e: f64 = x.iter().zip(&hx).map(|(a, b)| a * b).sum();
            let r: f64 = x
                .iter()
                .zip(&hx)
                .map(|(a, b)| (b - e * a).powi(2))
                .sum::<f64>()
                .sqrt();
            residual = r / e.abs().max(1.0);
            if residual < tol {
                if x.iter().sum::<f64>() < 0.0 {
                    x.iter_mut().for_each(|v| *v = -*v);
                }
                return Ok((e, x));
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual,
        })
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn complex_solve_matches_dense_product() {
        for n in [1, 2, 3, 4, 7, 8, 33] {
            check_complex_solve(n);
        }
    }

    fn check_complex_solve(n: usize) {
        let off = c(0.3, -0.2);
        let diag = |i: usize| c(2.0 + i as f64 * 0.1, 0.5 - 0.05 * i as f64);
        let mut lu = ComplexTridiagonal::new();
        lu.factor(n, off, diag).unwrap();
        let x: Vec<Complex64> = (0..n).map(|i| c(i as f64, 1.0 - i as f64 * 0.5)).collect();
        let mut b = vec![c(0.0, 0.0); n];
        for i in 0..n {
            b[i] = diag(i) * x[i];
            if i > 0 {
                b[i] += off * x[i - 1];
            }
            if i + 1 < n {
                b[i] += off * x[i + 1];
            }
        }
        let mut fused = b.clone();
        lu.solve_in_place(&mut b);
        for (got, want) in b.iter().zip(&x) {
            assert!((got - want).norm() < 1e-13, "n={n}");
        }
        let mut other = ComplexTridiagonal::new();
        other.factor_solve(off, diag, &mut fused).unwrap();
        for (got, want) in fused.iter().zip(&x) {
            assert!((got - want).norm() < 1e-13, "n={n}");
        }
        // the fused pass leaves reusable factors behind
        let mut again = b_of(&x, off, diag);
        other.solve_in_place(&mut again);
        for (got, want) in again.iter().zip(&x) {
            assert!((got - want).norm() < 1e-13, "n={n}");
        }
    }

    fn b_of(x: &[Complex64], off: Complex64, diag: impl Fn(usize) -> Complex64) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut b = diag(i) * x[i];
                if i > 0 {
                    b += off * x[i - 1];
                }
                if i + 1 < n {
                    b += off * x[i + 1];
                }
                b
            })
            .collect()
    }

    #[test]
    fn zero_pivot_reports_breakdown() {
        let mut lu = ComplexTridiagonal::new();
        let err = lu.factor(3, c(1.0, 0.0), |_| c(0.0, 0.0)).unwrap_err();
        assert_eq!(err, Error::SolverBreakdown { row: 0 });
    }

    #[test]
    fn cyclic_solve_matches_dense_product() {
        let n = 9;
        let diag: Vec<f64> = (0..n).map(|i| 3.0 + (i as f64).sin()).collect();
        let off = -0.7;
        let op = SymmetricTridiagonal {
            diag: diag.clone(),
            off,
            periodic: true,
        };
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut b = vec![0.0; n];
        op.apply(&x, &mut b);
        solve_cyclic_real(&diag, off, &mut b).unwrap();
        for (got, want) in b.iter().zip(&x) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn lowest_eigenpair_of_discrete_laplacian() {
        // -½ Δ with Dirichlet ends: λ₀ = (1 - cos(π/(n+1))) / h².
        let n = 50;
        let h = 0.1;
        let op = SymmetricTridiagonal {
            diag: vec![1.0 / (h * h); n],
            off: -0.5 / (h * h),
            periodic: false,
        };
        let (e, v) = op.lowest_eigenpair(&vec![1.0; n], 1e-12, 500).unwrap();
        let exact = (1.0 - (std::f64::consts::PI / (n + 1) as f64).cos()) / (h * h);
        assert!((e - exact).abs() < 1e-9 * exact);
        assert!(v.iter().all(|&x| x > 0.0));
    }
}
