//! Tilted washboard potential `U(φ) = -V₀ (cos φ + γ φ)` and its landmarks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Linear bias ramp γ(t) = t/T, held at 1 after the ramp ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRamp {
    pub ramp_time: f64,
}

impl BiasRamp {
    pub fn new(ramp_time: f64) -> Result<Self> {
        if !(ramp_time > 0.0) || !ramp_time.is_finite() {
            return Err(invalid("ramp_time", "must be positive and finite"));
        }
        Ok(Self { ramp_time })
    }

    pub fn gamma(&self, t: f64) -> f64 {
        (t / self.ramp_time).clamp(0.0, 1.0)
    }
}

/// Bias schedule seen by the propagator: a ramp or a fixed tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bias {
    Fixed(f64),
    Ramp(BiasRamp),
}

impl Bias {
    pub fn gamma(&self, t: f64) -> f64 {
        match self {
            Bias::Fixed(g) => *g,
            Bias::Ramp(r) => r.gamma(t),
        }
    }
}

fn check_bias(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Domain {
            quantity: "gamma",
            value: gamma,
            domain: "[0, 1]",
        })
    }
}

/// Potential energy in units of `E_C`.
#[inline]
pub fn washboard(phi: f64, gamma: f64, v0: f64) -> f64 {
    -v0 * (phi.cos() + gamma * phi)
}

/// Height of the barrier separating the well from the running region,
/// `2 V₀ [√(1-γ²) - γ arccos γ]`.
///
/// This is `U(φ*) - U(φ_min)` evaluated at the stationary points.
pub fn barrier_height(gamma: f64, v0: f64) -> Result<f64> {
    check_bias(gamma)?;
    // With γ = cos θ the bracket is sin θ - θ cos θ, which cancels as θ → 0.
    let theta = gamma.acos();
    let bracket = if theta < 0.1 {
        let t2 = theta * theta;
        theta * t2 * (1.0 / 3.0 - t2 * (1.0 / 30.0 - t2 * (1.0 / 840.0 - t2 / 45_360.0)))
    } else {
        theta.sin() - theta * gamma
    };
    Ok((2.0 * v0 * bracket).max(0.0))
}

/// Small-oscillation frequency at the well bottom, `(1-γ²)^{1/4} √V₀`.
pub fn plasma_frequency(gamma: f64, v0: f64) -> Result<f64> {
    check_bias(gamma)?;
    Ok((1.0 - gamma * gamma).sqrt().sqrt() * v0.sqrt())
}

/// Phase of the well bottom, `arcsin γ`.
pub fn well_bottom(gamma: f64) -> Result<f64> {
    check_bias(gamma)?;
    Ok(gamma.asin())
}

/// Phase of the barrier top, `π - arcsin γ`, separating trapped and running
/// regions.
pub fn barrier_top(gamma: f64) -> Result<f64> {
    check_bias(gamma)?;
    if gamma >= 1.0 {
        return Err(Error::DegenerateBarrier { gamma });
    }
    Ok(PI - gamma.asin())
}

#[cfg(test)]
mod tests {
    use super::*;

    const V0: f64 = 4.0;

    #[test]
    fn washboard_examples() {
        assert_eq!(washboard(0.0, 0.0, V0), -4.0);
        assert!(washboard(PI / 2.0, 0.0, V0).abs() < 1e-15);
        assert!((washboard(PI / 2.0, 0.5, V0) + PI).abs() < 1e-14);
    }

    /// Barrier from the stationary points of U, independent of any closed form.
    fn geometric_barrier(gamma: f64) -> f64 {
        let top = PI - gamma.asin();
        let bottom = gamma.asin();
        washboard(top, gamma, V0) - washboard(bottom, gamma, V0)
    }

    #[test]
    fn barrier_matches_stationary_point_difference() {
        // The alternative √(1-γ) form differs from the geometric barrier;
        // the shipped formula must agree with the geometry.
        let g: f64 = 0.5;
        let printed_variant = 2.0 * V0 * ((1.0 - g).sqrt() - g * g.acos());
        let geo = geometric_barrier(g);
        assert!((printed_variant - geo).abs() > 1.0);
        assert!((barrier_height(g, V0).unwrap() - geo).abs() < 1e-12 * geo);

        for i in 0..100 {
            let g = i as f64 / 100.0;
            let geo = geometric_barrier(g);
            let b = barrier_height(g, V0).unwrap();
            assert!(((b - geo) / geo).abs() < 1e-10, "γ={g}: {b} vs {geo}");
        }
    }

    #[test]
    fn barrier_endpoints() {
        assert!((barrier_height(0.0, V0).unwrap() - 8.0).abs() < 1e-15);
        assert_eq!(barrier_height(1.0, 7.0).unwrap(), 0.0);
        assert!(barrier_height(1.1, V0).is_err());
        assert!(barrier_height(-0.1, V0).is_err());
    }

    #[test]
    fn barrier_strictly_decreasing() {
        let mut prev = barrier_height(0.001, V0).unwrap();
        for i in 2..1000 {
            let b = barrier_height(i as f64 / 1000.0, V0).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn plasma_frequency_examples() {
        assert!((plasma_frequency(0.0, V0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(plasma_frequency(1.0, V0).unwrap(), 0.0);
        let w = plasma_frequency(0.6, V0).unwrap();
        assert!((w - 0.64f64.powf(0.25) * 2.0).abs() < 1e-14);
        assert!((w - 1.788_854_381_999_831_8).abs() < 1e-12);
    }

    #[test]
    fn plasma_frequency_is_curvature_at_well_bottom() {
        let h = 1e-4;
        for g in [0.0f64, 0.2, 0.5, 0.8, 0.95] {
            let m = g.asin();
            let curv = (washboard(m + h, g, V0) - 2.0 * washboard(m, g, V0)
                + washboard(m - h, g, V0))
                / (h * h);
            let w = plasma_frequency(g, V0).unwrap();
            assert!(((curv - w * w) / (w * w)).abs() < 1e-6, "γ={g}");
        }
    }

    #[test]
    fn barrier_top_examples() {
        assert!((barrier_top(0.0).unwrap() - PI).abs() < 1e-15);
        assert!((barrier_top(0.5).unwrap() - (PI - PI / 6.0)).abs() < 1e-14);
        assert!((barrier_top(1.0 - 1e-12).unwrap() - PI / 2.0).abs() < 1e-5);
        assert!(matches!(
            barrier_top(1.0),
            Err(Error::DegenerateBarrier { .. })
        ));
    }

    #[test]
    fn barrier_top_is_a_local_maximum() {
        let h = 1e-5;
        for g in [0.0, 0.3, 0.6, 0.9] {
            let p = barrier_top(g).unwrap();
            let d1 = (washboard(p + h, g, V0) - washboard(p - h, g, V0)) / (2.0 * h);
            let d2 = (washboard(p + h, g, V0) - 2.0 * washboard(p, g, V0)
                + washboard(p - h, g, V0))
                / (h * h);
            assert!(d1.abs() < 1e-8);
            assert!(d2 < 0.0);
        }
    }

    #[test]
    fn ramp_shape() {
        let r = BiasRamp::new(800.0).unwrap();
        assert_eq!(r.gamma(0.0), 0.0);
        assert_eq!(r.gamma(800.0), 1.0);
        assert_eq!(r.gamma(400.0), 0.5);
        assert_eq!(r.gamma(1e6), 1.0);
        assert!(BiasRamp::new(0.0).is_err());
    }
}
