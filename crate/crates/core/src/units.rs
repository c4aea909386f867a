//! Physical junction parameters and their dimensionless counterparts.
//!
//! Everything downstream of this module works in normalized units: energies
//! in units of the charging energy `E_C = ħ² / M` with `M = C (Φ₀/2π)²`, and
//! time in units of `ħ / E_C`. With that choice the Schrödinger equation takes
//! the form `i ∂ψ/∂t = [-½ ∂²/∂φ² - V₀ (cos φ + γ φ)] ψ` with `V₀ = E_J / E_C`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Reduced Planck constant (J·s), exact SI value.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Elementary charge (C), exact SI value.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Planck constant (J·s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Magnetic flux quantum h / 2e (Wb).
pub const FLUX_QUANTUM: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);

/// A junction described by lab parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalJunction {
    /// Capacitance in farad.
    pub capacitance: f64,
    /// Critical current in ampere.
    pub critical_current: f64,
}

impl PhysicalJunction {
    pub fn new(capacitance: f64, critical_current: f64) -> Result<Self> {
        let j = Self {
            capacitance,
            critical_current,
        };
        j.validate()?;
        Ok(j)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacitance > 0.0) || !self.capacitance.is_finite() {
            return Err(invalid("capacitance", "must be positive and finite"));
        }
        if !(self.critical_current > 0.0) || !self.critical_current.is_finite() {
            return Err(invalid("critical_current", "must be positive and finite"));
        }
        Ok(())
    }

    /// Effective "mass" of the phase particle, `C (Φ₀/2π)²` (J·s²).
    pub fn mass(&self) -> f64 {
        let reduced_flux = FLUX_QUANTUM / (2.0 * std::f64::consts::PI);
        self.capacitance * reduced_flux * reduced_flux
    }

    /// Josephson energy `I₀ Φ₀ / 2π` (J).
    pub fn josephson_energy(&self) -> f64 {
        self.critical_current * FLUX_QUANTUM / (2.0 * std::f64::consts::PI)
    }

    /// Charging energy `ħ² / M` (J).
    pub fn charging_energy(&self) -> f64 {
        HBAR * HBAR / self.mass()
    }
}

/// Result of [`normalize`]: the barrier coefficient and the time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub v0: f64,
    /// Physical duration (s) of one normalized time unit, `ħ / E_C`.
    pub time_scale: f64,
}

impl Normalization {
    pub fn to_normalized_time(&self, seconds: f64) -> f64 {
        seconds / self.time_scale
    }

    pub fn to_seconds(&self, normalized: f64) -> f64 {
        normalized * self.time_scale
    }
}

/// Converts lab parameters to the dimensionless barrier `V₀ = E_J / E_C`.
pub fn normalize(junction: &PhysicalJunction) -> Result<Normalization> {
    junction.validate()?;
    let e_c = junction.charging_energy();
    Ok(Normalization {
        v0: junction.josephson_energy() / e_c,
        time_scale: HBAR / e_c,
    })
}

pub const DEFAULT_V0: f64 = 4.0;
pub const DEFAULT_DT: f64 = 0.01;

/// Dimensionless simulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizedParams {
    /// Barrier coefficient `E_J / E_C`.
    pub v0: f64,
    /// Duration of the bias ramp from γ = 0 to γ = 1.
    pub ramp_time: f64,
    /// Number of equally spaced voltage measurements during the ramp.
    pub measurements: usize,
    /// Crank-Nicolson time step.
    pub dt: f64,
}

impl NormalizedParams {
    pub fn new(v0: f64, ramp_time: f64, measurements: usize, dt: f64) -> Result<Self> {
        let p = Self {
            v0,
            ramp_time,
            measurements,
            dt,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v0 > 0.0) || !self.v0.is_finite() {
            return Err(invalid("v0", "must be positive and finite"));
        }
        if !(self.ramp_time > 0.0) || !self.ramp_time.is_finite() {
            return Err(invalid("ramp_time", "must be positive and finite"));
        }
        if self.measurements == 0 {
            return Err(invalid("measurements", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.dt > self.measurement_interval() {
            return Err(invalid(
                "dt",
                format!(
                    "{} exceeds the measurement interval T/N = {}",
                    self.dt,
                    self.measurement_interval()
                ),
            ));
        }
        Ok(())
    }

    /// Time between consecutive measurements, `T / N`.
    pub fn measurement_interval(&self) -> f64 {
        self.ramp_time / self.measurements as f64
    }
}

impl Default for NormalizedParams {
    fn default() -> Self {
        Self {
            v0: DEFAULT_V0,
            ramp_time: 800.0,
            measurements: 50,
            dt: DEFAULT_DT,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Capacitance giving E_J = E_C for a given critical current.
    fn unit_ratio_capacitance(i0: f64) -> f64 {
        // E_J / E_C = I₀ Φ₀/2π · C (Φ₀/2π)² / ħ²  =>  C = ħ² / (I₀ (Φ₀/2π)³)
        let rf = FLUX_QUANTUM / (2.0 * std::f64::consts::PI);
        HBAR * HBAR / (i0 * rf * rf * rf)
    }

    #[test]
    fn equal_energies_give_unit_barrier() {
        let i0 = 1e-6;
        let j = PhysicalJunction::new(unit_ratio_capacitance(i0), i0).unwrap();
        let n = normalize(&j).unwrap();
        assert!((n.v0 - 1.0).abs() < 1e-12, "{}", n.v0);
    }

    #[test]
    fn v0_is_linear_in_capacitance() {
        let j = PhysicalJunction::new(1e-15, 1e-6).unwrap();
        let base = normalize(&j).unwrap().v0;
        for k in [2.0, 3.5, 10.0] {
            let scaled = PhysicalJunction::new(k * 1e-15, 1e-6).unwrap();
            let v = normalize(&scaled).unwrap().v0;
            assert!(((v / base) - k).abs() < 1e-13 * k);
        }
    }

    #[test]
    fn time_round_trip() {
        let n = normalize(&PhysicalJunction::new(2e-15, 3e-7).unwrap()).unwrap();
        for s in [1e-12, 3.3e-9, 1e-3] {
            let back = n.to_seconds(n.to_normalized_time(s));
            assert!(((back - s) / s).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_lab_parameters() {
        assert!(PhysicalJunction::new(0.0, 1e-6).is_err());
        assert!(PhysicalJunction::new(1e-15, -1.0).is_err());
        let bad = PhysicalJunction {
            capacitance: -1.0,
            critical_current: 1.0,
        };
        assert!(normalize(&bad).unwrap_err().is_config());
    }

    #[test]
    fn default_working_point() {
        let p = NormalizedParams::default();
        assert_eq!(p.v0, 4.0);
        assert_eq!(p.dt, 0.01);
        p.validate().unwrap();
    }

    #[test]
    fn dt_must_fit_in_measurement_interval() {
        assert!(NormalizedParams::new(4.0, 800.0, 3200, 0.25).is_ok());
        let e = NormalizedParams::new(4.0, 800.0, 3200, 0.3).unwrap_err();
        assert!(e.is_config());
        assert!(NormalizedParams::new(4.0, 800.0, 0, 0.01).is_err());
        assert!(NormalizedParams::new(0.0, 800.0, 1, 0.01).is_err());
    }
}
