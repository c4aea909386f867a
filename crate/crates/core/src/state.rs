//! Uniform phase grid and complex wavefunction samples on it.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::fmt_f64;

/// Left edge of the default computational domain.
pub const DEFAULT_PHI_MIN: f64 = -PI - 2.0;
/// Right edge of the default interior (where the absorbing layer starts).
pub const DEFAULT_INTERIOR_END: f64 = 12.0;
/// Default upper bound on the grid spacing.
pub const DEFAULT_MAX_SPACING: f64 = 0.01;

/// User-facing description of the computational domain: the interior
/// `[phi_min, interior_end]` plus whatever absorbing layer is attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub phi_min: f64,
    pub interior_end: f64,
    pub max_spacing: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            phi_min: DEFAULT_PHI_MIN,
            interior_end: DEFAULT_INTERIOR_END,
            max_spacing: DEFAULT_MAX_SPACING,
        }
    }
}

impl GridSettings {
    pub fn build(&self, absorber: &crate::absorber::AbsorberProfile) -> Result<Grid> {
        if !(self.interior_end > self.phi_min) {
            return Err(invalid("interior_end", "must exceed phi_min"));
        }
        crate::absorber::padded_grid(self.phi_min, self.interior_end, self.max_spacing, absorber)
    }

    /// Same domain with half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            max_spacing: 0.5 * self.max_spacing,
            ..*self
        }
    }
}

/// Uniform grid `φ_j = φ_min + j h`, `j = 0..n`.
///
/// The first and last points carry homogeneous Dirichlet values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(phi_min: f64, phi_max: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(invalid("n", "a grid needs at least 3 points"));
        }
        if !(phi_max > phi_min) || !phi_min.is_finite() || !phi_max.is_finite() {
            return Err(invalid("phi_max", "must exceed phi_min"));
        }
        Ok(Self {
            phi_min,
            phi_max,
            n,
            h: (phi_max - phi_min) / (n - 1) as f64,
        })
    }

    /// Smallest grid on `[phi_min, phi_max]` whose spacing does not exceed
    /// `max_spacing`.
    pub fn with_max_spacing(phi_min: f64, phi_max: f64, max_spacing: f64) -> Result<Self> {
        if !(max_spacing > 0.0) {
            return Err(invalid("max_spacing", "must be positive"));
        }
        let cells = ((phi_max - phi_min) / max_spacing - 1e-9).ceil().max(2.0) as usize;
        Self::new(phi_min, phi_max, cells + 1)
    }

    #[inline]
    pub fn point(&self, j: usize) -> f64 {
        self.phi_min + j as f64 * self.h
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.point(j))
    }

    /// Cell index `j` and fractional offset `s ∈ [0, 1]` with
    /// `φ = φ_j + s h`, after clamping `φ` into the grid.
    pub fn locate(&self, phi: f64) -> (usize, f64) {
        let x = ((phi - self.phi_min) / self.h).clamp(0.0, (self.n - 1) as f64);
        let j = (x.floor() as usize).min(self.n - 2);
        (j, x - j as f64)
    }

    pub fn contains(&self, phi: f64) -> bool {
        phi >= self.phi_min && phi <= self.phi_max
    }
}

/// Complex amplitudes ψ(φ_j) on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.n {
            return Err(invalid(
                "amplitudes",
                format!(
                    "length {} does not match grid size {}",
                    amplitudes.len(),
                    grid.n
                ),
            ));
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            amplitudes: vec![Complex64::new(0.0, 0.0); grid.n],
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> Complex64) -> Self {
        Self {
            amplitudes: grid.points().map(f).collect(),
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn density(&self) -> impl Iterator<Item = f64> + '_ {
        self.amplitudes.iter().map(|a| a.norm_sqr())
    }

    /// Trapezoidal `∫|ψ|² dφ` over the whole grid.
    pub fn norm_squared(&self) -> f64 {
        let n = self.grid.n;
        let inner: f64 = self.amplitudes[1..n - 1].iter().map(|a| a.norm_sqr()).sum();
        self.grid.h
            * (inner + 0.5 * (self.amplitudes[0].norm_sqr() + self.amplitudes[n - 1].norm_sqr()))
    }

    fn cell_integral(&self, j: usize, s0: f64, s1: f64) -> f64 {
        let d0 = self.amplitudes[j].norm_sqr();
        let d1 = self.amplitudes[j + 1].norm_sqr();
        self.grid.h * ((s1 - s0) * d0 + 0.5 * (s1 * s1 - s0 * s0) * (d1 - d0))
    }

    /// `∫_a^b |ψ|² dφ` of the piecewise-linear interpolant of `|ψ|²`.
    ///
    /// Bounds outside the grid are clamped to its edges. Partial cells are
    /// integrated exactly, so the result is continuous in `a` and `b`.
    pub fn probability_in(&self, a: f64, b: f64) -> Result<f64> {
        if !(a < b) {
            return Err(Error::Domain {
                quantity: "window lower bound",
                value: a,
                domain: "(-inf, b)",
            });
        }
        let (ja, sa) = self.grid.locate(a);
        let (jb, sb) = self.grid.locate(b);
        if ja == jb {
            return Ok(self.cell_integral(ja, sa, sb));
        }
        let mut total = self.cell_integral(ja, sa, 1.0);
        for j in ja + 1..jb {
            total += 0.5
                * self.grid.h
                * (self.amplitudes[j].norm_sqr() + self.amplitudes[j + 1].norm_sqr());
        }
        total += self.cell_integral(jb, 0.0, sb);
        Ok(total)
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.amplitudes {
            *a *= factor;
        }
    }

    /// Rescales to unit norm; fails on an all-zero state.
    pub fn normalize(&mut self) -> Result<f64> {
        let n2 = self.norm_squared();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::Numerical(format!(
                "cannot normalize state with norm² {n2}"
            )));
        }
        self.scale(1.0 / n2.sqrt());
        Ok(n2)
    }

    /// Trapezoidal inner product `⟨self|other⟩`.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        let n = self.grid.n;
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, (a, b)) in self.amplitudes.iter().zip(&other.amplitudes).enumerate() {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            acc += a.conj() * b * w;
        }
        acc * self.grid.h
    }

    /// Writes `phi,re,im,density` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "phi,re,im,density")?;
        for (j, a) in self.amplitudes.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.grid.point(j)),
                fmt_f64(a.re),
                fmt_f64(a.im),
                fmt_f64(a.norm_sqr())
            )?;
        }
        Ok(())
    }
}
