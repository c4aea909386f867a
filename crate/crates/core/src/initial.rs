//! The t = 0 state: ground state of the untilted periodic washboard, cut to
//! one period and placed on the open grid.
//!
//! The periodic ground state is the Mathieu function ce₀ in disguise: with
//! `z = (φ + π)/2` the stationary equation becomes Mathieu's equation with
//! characteristic value `a = 8E` and parameter `q = 4V₀`. It is computed here
//! by inverse iteration on the discretized Hamiltonian rather than from
//! special functions.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::potential::{barrier_top, washboard};
use crate::state::{Grid, WaveFunction};
use crate::tridiag::SymmetricTridiagonal;

/// Relative eigen-residual accepted by the inverse iteration.
const EIGEN_TOL: f64 = 1e-9;
const EIGEN_MAX_ITER: usize = 2000;

/// Ground state of `-½∂² - V₀ cos φ` on the periodic grid
/// `φ_j = -π + 2πj/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGroundState {
    pub v0: f64,
    /// Real, nodeless samples normalized so that `h Σ ψ_j² = 1`.
    pub values: Vec<f64>,
    pub energy: f64,
}

impl PeriodicGroundState {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.values.len() as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        -PI + j as f64 * self.spacing()
    }

    /// Periodic four-point cubic interpolation.
    pub fn interpolate(&self, phi: f64) -> f64 {
        let m = self.values.len();
        let x = (phi + PI).rem_euclid(2.0 * PI) / self.spacing();
        let j = x.floor() as isize;
        let t = x - j as f64;
        let at = |k: isize| self.values[k.rem_euclid(m as isize) as usize];
        let (p0, p1, p2, p3) = (at(j - 1), at(j), at(j + 1), at(j + 2));
        // Lagrange weights on nodes -1, 0, 1, 2.
        let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3
    }

    /// Relative residual `‖Hψ - E₀ψ‖ / ‖ψ‖` of the discrete eigenproblem.
    pub fn residual(&self) -> f64 {
        let op = periodic_hamiltonian(self.v0, self.values.len());
        let mut hx = vec![0.0; self.values.len()];
        op.apply(&self.values, &mut hx);
        let r: f64 = hx
            .iter()
            .zip(&self.values)
            .map(|(a, b)| (a - self.energy * b).powi(2))
            .sum();
        let n: f64 = self.values.iter().map(|v| v * v).sum();
        (r / n).sqrt()
    }
}

fn periodic_hamiltonian(v0: f64, m: usize) -> SymmetricTridiagonal {
    let h = 2.0 * PI / m as f64;
    SymmetricTridiagonal {
        diag: (0..m)
            .map(|j| 1.0 / (h * h) + washboard(-PI + j as f64 * h, 0.0, v0))
            .collect(),
        off: -0.5 / (h * h),
        periodic: true,
    }
}

pub const MIN_PERIODIC_POINTS: usize = 64;

/// Lowest eigenpair of the zero-bias Hamiltonian with periodic boundaries.
pub fn periodic_ground_state(v0: f64, m: usize) -> Result<PeriodicGroundState> {
    if !(v0 > 0.0) || !v0.is_finite() {
        return Err(invalid("v0", "must be positive and finite"));
    }
    if m < MIN_PERIODIC_POINTS {
        return Err(invalid(
            "periodic_points",
            format!("need at least {MIN_PERIODIC_POINTS}"),
        ));
    }
    let op = periodic_hamiltonian(v0, m);
    let h = 2.0 * PI / m as f64;
    // Even, nodeless starting vector peaked at the well bottom.
    let start: Vec<f64> = (0..m).map(|j| 2.0 + (-PI + j as f64 * h).cos()).collect();
    let (energy, mut values) = op.lowest_eigenpair(&start, EIGEN_TOL, EIGEN_MAX_ITER)?;
    let scale = 1.0 / h.sqrt();
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(PeriodicGroundState { v0, values, energy })
}

/// Places one period of the ground state on `grid`, zero outside `[-π, π]`,
/// and renormalizes on the open grid.
pub fn truncate_to_open_grid(gs: &PeriodicGroundState, grid: Grid) -> Result<WaveFunction> {
    if grid.phi_min > -PI || grid.phi_max < PI {
        return Err(Error::Config(format!(
            "grid [{}, {}] does not contain [-π, π]",
            grid.phi_min, grid.phi_max
        )));
    }
    let mut psi = WaveFunction::from_fn(grid, |phi| {
        if (-PI..=PI).contains(&phi) {
            Complex64::new(gs.interpolate(phi), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    psi.normalize()?;
    Ok(psi)
}

/// Truncated periodic ground state on `grid`, with the periodic solve
/// resolved at least as finely as the grid itself.
pub fn initial_state(v0: f64, grid: Grid) -> Result<WaveFunction> {
    let m = ((2.0 * PI / grid.h).ceil() as usize).max(MIN_PERIODIC_POINTS);
    let gs = periodic_ground_state(v0, m + m % 2)?;
    truncate_to_open_grid(&gs, grid)
}

/// Index of the first grid point discarded by a cut at `phi_star`: the left
/// end of the cell containing the cut, so that the piecewise-linear density
/// vanishes identically on `[φ*, ∞)`.
pub fn cut_index(grid: &Grid, phi_star: f64) -> usize {
    grid.locate(phi_star).0
}

/// Ground state of the tilted well with a hard wall at the barrier top,
/// normalized on `grid`. Used as the trapped state at fixed bias.
pub fn well_ground_state(v0: f64, gamma: f64, grid: Grid) -> Result<WaveFunction> {
    let top = barrier_top(gamma)?;
    if !grid.contains(top) {
        return Err(Error::Config(format!(
            "barrier top {top} lies outside the grid"
        )));
    }
    let cut = cut_index(&grid, top);
    if cut < 3 {
        return Err(Error::Config(
            "well region holds fewer than two grid points".into(),
        ));
    }
    let h = grid.h;
    let op = SymmetricTridiagonal {
        diag: (1..cut)
            .map(|j| 1.0 / (h * h) + washboard(grid.point(j), gamma, v0))
            .collect(),
        off: -0.5 / (h * h),
        periodic: false,
    };
    let bottom = gamma.asin();
    let start: Vec<f64> = (1..cut)
        .map(|j| (-(grid.point(j) - bottom).powi(2)).exp() + 1e-3)
        .collect();
    let (_, v) = op.lowest_eigenpair(&start, EIGEN_TOL, EIGEN_MAX_ITER)?;
    let mut psi = WaveFunction::zeros(grid);
    for (k, x) in v.into_iter().enumerate() {
        psi.amplitudes_mut()[k + 1] = Complex64::new(x, 0.0);
    }
    psi.normalize()?;
    Ok(psi)
}
