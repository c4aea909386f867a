//! Complex absorbing potential placed at the edge of the grid.
//!
//! The layer adds `-iW(φ)` to the Hamiltonian with
//! `W = strength · ((φ - φ_start)/width)^order` inside the layer and zero in
//! the interior. Probability entering the layer decays instead of reflecting
//! off the Dirichlet wall at the end of the grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::state::Grid;

pub const DEFAULT_WIDTH: f64 = 20.0;
pub const DEFAULT_STRENGTH: f64 = 8.0;
pub const DEFAULT_ORDER: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbsorberProfile {
    /// Layer thickness in radians.
    pub width: f64,
    /// Value of `W` at the outer edge of the layer (units of `E_C`).
    pub strength: f64,
    pub order: u32,
    /// Also place a mirrored layer at the left edge of the grid.
    pub left: bool,
}

impl Default for AbsorberProfile {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            strength: DEFAULT_STRENGTH,
            order: DEFAULT_ORDER,
            left: false,
        }
    }
}

impl AbsorberProfile {
    /// No absorption anywhere; the grid ends in hard walls.
    pub fn disabled() -> Self {
        Self {
            strength: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(invalid("absorber.width", "must be positive"));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(invalid("absorber.strength", "must be non-negative"));
        }
        if self.order < 2 {
            return Err(invalid("absorber.order", "must be at least 2"));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.strength > 0.0
    }

    /// Imaginary potential `W(φ) ≥ 0` on `grid`.
    pub fn potential(&self, grid: &Grid, phi: f64) -> f64 {
        if !self.is_active() {
            return 0.0;
        }
        let ramp = |depth: f64| {
            if depth <= 0.0 {
                0.0
            } else {
                self.strength * (depth / self.width).min(1.0).powi(self.order as i32)
            }
        };
        let mut w = ramp(phi - (grid.phi_max - self.width));
        if self.left {
            w += ramp(grid.phi_min + self.width - phi);
        }
        w
    }

    /// Right end of the absorption-free interior.
    pub fn interior_end(&self, grid: &Grid) -> f64 {
        grid.phi_max - self.width
    }

    /// Left end of the absorption-free interior.
    pub fn interior_start(&self, grid: &Grid) -> f64 {
        if self.left {
            grid.phi_min + self.width
        } else {
            grid.phi_min
        }
    }
}

/// Builds the grid covering `[interior_start, interior_end]` plus the
/// absorbing layer(s).
pub fn padded_grid(
    interior_start: f64,
    interior_end: f64,
    max_spacing: f64,
    absorber: &AbsorberProfile,
) -> Result<Grid> {
    absorber.validate()?;
    let lo = if absorber.left {
        interior_start - absorber.width
    } else {
        interior_start
    };
    Grid::with_max_spacing(lo, interior_end + absorber.width, max_spacing)
}
