//! Discrete voltage measurements during the bias ramp.
//!
//! A measurement at bias γ splits the line at the barrier top φ*. Everything
//! beyond φ*, plus whatever has already been swallowed by the absorbing layer
//! since the previous measurement, counts as a switch. If no switch is
//! registered the state is cut back to `φ < φ*` and renormalized.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::absorber::AbsorberProfile;
use crate::error::{Error, Result};
use crate::initial::{cut_index, initial_state};
use crate::io::fmt_f64;
use crate::potential::{barrier_top, Bias, BiasRamp};
use crate::propagate::Propagator;
use crate::state::{Grid, WaveFunction};
use crate::units::NormalizedParams;

/// Largest switching probability that still leaves a renormalizable state.
pub const RENORM_EPSILON: f64 = 1e-12;

/// Outcome of a single measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Switching probability `p`.
    pub p: f64,
    /// Norm lost to the absorber since the state was last normalized.
    pub absorbed: f64,
    /// Probability sitting beyond the cut but still inside the grid.
    pub beyond_cut: f64,
}

/// Cut position for a measurement at bias `gamma`. At γ = 1 the barrier
/// top and the well bottom merge at π/2.
pub fn measurement_cut(gamma: f64) -> Result<f64> {
    if gamma == 1.0 {
        Ok(FRAC_PI_2)
    } else {
        barrier_top(gamma)
    }
}

/// Measures `psi` at the cut `phi_star`, assuming it had unit norm right
/// after the previous measurement.
pub fn measure(psi: &WaveFunction, phi_star: f64) -> Result<Measurement> {
    let phi_max = psi.grid().phi_max;
    let beyond_cut = if phi_star < phi_max {
        psi.probability_in(phi_star, phi_max)?
    } else {
        0.0
    };
    let absorbed = (1.0 - psi.norm_squared()).max(0.0);
    Ok(Measurement {
        p: (beyond_cut + absorbed).clamp(0.0, 1.0),
        absorbed,
        beyond_cut,
    })
}

pub fn switching_probability(psi: &WaveFunction, phi_star: f64) -> Result<f64> {
    measure(psi, phi_star).map(|m| m.p)
}

/// State conditioned on "no switch": amplitudes at and beyond the cell
/// holding `phi_star` are zeroed and the rest is rescaled to unit norm.
///
/// Fails when `p` is within [`RENORM_EPSILON`] of one or when nothing is
/// left to renormalize.
pub fn project_no_switch(psi: &WaveFunction, phi_star: f64, p: f64) -> Result<WaveFunction> {
    if !(p < 1.0 - RENORM_EPSILON) {
        return Err(Error::NotRenormalizable { p });
    }
    let mut out = psi.clone();
    let cut = cut_index(psi.grid(), phi_star);
    for a in &mut out.amplitudes_mut()[cut..] {
        *a = Complex64::new(0.0, 0.0);
    }
    let kept = out.norm_squared();
    if !(kept > 0.0) {
        return Err(Error::NotRenormalizable { p });
    }
    out.scale(1.0 / kept.sqrt());
    Ok(out)
}

/// Switching pdf from conditional probabilities:
/// `pdf_1 = p_1`, `pdf_n = p_n Π_{k<n} (1 - p_k)`. Also returns the final
/// survival `Π (1 - p_k)`.
pub fn assemble_pdf(p: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut survival = 1.0;
    let mut pdf = Vec::with_capacity(p.len());
    for &pn in p {
        if !(0.0..=1.0).contains(&pn) {
            return Err(Error::Domain {
                quantity: "switching probability",
                value: pn,
                domain: "[0, 1]",
            });
        }
        pdf.push(pn * survival);
        survival *= 1.0 - pn;
    }
    Ok((pdf, survival))
}

/// Result of a measured ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingRecord {
    /// Number of measurements scheduled over the ramp.
    pub measurements: usize,
    /// Bias at each completed measurement, `n / N`.
    pub gammas: Vec<f64>,
    pub p: Vec<f64>,
    pub pdf: Vec<f64>,
    /// Probability of not having switched after the last completed
    /// measurement.
    pub survival: f64,
}

impl SwitchingRecord {
    /// Builds a record from the conditional probabilities of the first
    /// `p.len()` of `measurements` measurements.
    pub fn from_probabilities(measurements: usize, p: Vec<f64>) -> Result<Self> {
        let (pdf, survival) = assemble_pdf(&p)?;
        let gammas = (1..=p.len())
            .map(|n| n as f64 / measurements as f64)
            .collect();
        Ok(Self {
            measurements,
            gammas,
            p,
            pdf,
            survival,
        })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.p.len() == self.measurements
    }

    /// Total switching probability over the recorded measurements.
    pub fn total_switch(&self) -> f64 {
        self.pdf.iter().sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.pdf
            .iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    }

    /// Writes `n,gamma,p,pdf` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,gamma,p,pdf")?;
        for (i, ((g, p), f)) in self.gammas.iter().zip(&self.p).zip(&self.pdf).enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                i + 1,
                fmt_f64(*g),
                fmt_f64(*p),
                fmt_f64(*f)
            )?;
        }
        Ok(())
    }
}

/// A protocol run that stopped early; `partial` holds the measurements
/// completed before the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("protocol stopped after {} of {} measurements: {source}", partial.len(), partial.measurements)]
pub struct ProtocolError {
    pub partial: SwitchingRecord,
    #[source]
    pub source: Error,
}

impl ProtocolError {
    fn new(measurements: usize, p: Vec<f64>, source: Error) -> Self {
        let partial = SwitchingRecord::from_probabilities(measurements, p)
            .unwrap_or_else(|_| SwitchingRecord::from_probabilities(measurements, vec![]).unwrap());
        Self { partial, source }
    }
}

/// Runs the measured ramp: start from the truncated periodic ground state,
/// then alternately evolve for `T/N` under the linear ramp and measure.
///
/// Once the no-switch probability drops below [`RENORM_EPSILON`] a certain
/// switch is recorded and every later measurement gets `p = 1`.
pub fn run_protocol(
    params: &NormalizedParams,
    grid: Grid,
    absorber: &AbsorberProfile,
) -> std::result::Result<SwitchingRecord, ProtocolError> {
    let n_meas = params.measurements;
    let fail = |p: Vec<f64>, e: Error| ProtocolError::new(n_meas, p, e);
    params.validate().map_err(|e| fail(vec![], e))?;

    let mut p = Vec::with_capacity(n_meas);
    let mut psi = initial_state(params.v0, grid).map_err(|e| fail(vec![], e))?;
    let mut prop =
        Propagator::new(grid, params.v0, params.dt, absorber).map_err(|e| fail(vec![], e))?;
    let ramp = Bias::Ramp(BiasRamp::new(params.ramp_time).map_err(|e| fail(vec![], e))?);
    let t_at = |n: usize| params.ramp_time * n as f64 / n_meas as f64;

    for n in 1..=n_meas {
        let step = prop
            .evolve(&mut psi, t_at(n - 1), t_at(n), &ramp, usize::MAX)
            .and_then(|_| {
                let gamma = n as f64 / n_meas as f64;
                let cut = measurement_cut(gamma)?;
                let m = measure(&psi, cut)?;
                Ok((cut, m.p))
            });
        let (cut, pn) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(p, e)),
        };
        if pn >= 1.0 - RENORM_EPSILON {
            p.resize(n_meas, 1.0);
            break;
        }
        p.push(pn);
        if n < n_meas {
            psi = project_no_switch(&psi, cut, pn).map_err(|e| fail(p.clone(), e))?;
        }
    }
    SwitchingRecord::from_probabilities(n_meas, p.clone()).map_err(|e| fail(p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absorber::padded_grid;
    use crate::initial::well_ground_state;
    use crate::propagate::evolve;
    use crate::state::{DEFAULT_INTERIOR_END, DEFAULT_PHI_MIN};
    use proptest::prelude::*;

    fn small_grid() -> Grid {
        padded_grid(DEFAULT_PHI_MIN, 8.0, 0.02, &AbsorberProfile::default()).unwrap()
    }

    fn bump(grid: Grid, centre: f64) -> WaveFunction {
        let mut psi = WaveFunction::from_fn(grid, |x| {
            Complex64::new((-(x - centre).powi(2) * 4.0).exp(), 0.0)
        });
        psi.normalize().unwrap();
        psi
    }

    #[test]
    fn localized_states_give_zero_or_one() {
        let grid = small_grid();
        let cut = measurement_cut(0.3).unwrap();
        assert!(switching_probability(&bump(grid, 0.0), cut).unwrap() < 1e-15);
        assert!((switching_probability(&bump(grid, 7.0), cut).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cut_position() {
        assert!((measurement_cut(0.0).unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(measurement_cut(1.0).unwrap(), FRAC_PI_2);
        assert!(measurement_cut(1.2).is_err());
    }

    #[test]
    fn pdf_assembly_examples() {
        let (pdf, s) = assemble_pdf(&[0.1, 0.1, 0.1]).unwrap();
        for (a, b) in pdf.iter().zip([0.1, 0.09, 0.081]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s - 0.729).abs() < 1e-15);

        let (pdf, s) = assemble_pdf(&[0.2, 0.5, 0.5]).unwrap();
        for (a, b) in pdf.iter().zip([0.2, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s - 0.2).abs() < 1e-15);

        let (pdf, s) = assemble_pdf(&[0.0; 4]).unwrap();
        assert!(pdf.iter().all(|&x| x == 0.0));
        assert_eq!(s, 1.0);

        let (pdf, s) = assemble_pdf(&[1.0, 0.3, 0.7]).unwrap();
        assert_eq!(pdf, vec![1.0, 0.0, 0.0]);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn pdf_assembly_rejects_bad_probabilities() {
        for bad in [-0.1, 1.5, f64::NAN] {
            let err = assemble_pdf(&[0.2, bad]).unwrap_err();
            assert!(matches!(err, Error::Domain { .. }));
        }
    }

    proptest! {
        #[test]
        fn telescoping(p in prop::collection::vec(0.0f64..=1.0, 0..200)) {
            let (pdf, s) = assemble_pdf(&p).unwrap();
            prop_assert!(pdf.iter().all(|&x| x >= 0.0));
            let total: f64 = pdf.iter().sum();
            prop_assert!((total + s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projection_is_idempotent(centre in -2.0f64..4.0, gamma in 0.0f64..0.95) {
            let grid = small_grid();
            let cut = measurement_cut(gamma).unwrap();
            let psi = bump(grid, centre);
            let p = switching_probability(&psi, cut).unwrap();
            prop_assume!(p < 0.99);
            let once = project_no_switch(&psi, cut, p).unwrap();
            prop_assert!((once.norm_squared() - 1.0).abs() < 1e-12);
            let m = measure(&once, cut).unwrap();
            prop_assert_eq!(m.beyond_cut, 0.0);
            // Only the rounding of the renormalized norm remains.
            prop_assert!(m.p < 1e-13);
            let twice = project_no_switch(&once, cut, 0.0).unwrap();
            for (a, b) in once.amplitudes().iter().zip(twice.amplitudes()) {
                prop_assert!((a - b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn projection_leaves_confined_state_alone() {
        let grid = small_grid();
        let cut = measurement_cut(0.5).unwrap();
        let psi = bump(grid, -1.0);
        let out = project_no_switch(&psi, cut, 0.0).unwrap();
        for (a, b) in out.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn projection_refuses_certain_switch() {
        let grid = small_grid();
        let psi = bump(grid, 7.0);
        let err = project_no_switch(&psi, 2.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::NotRenormalizable { .. }));
        let err = project_no_switch(&psi, 2.0, 1.0 - 1e-13).unwrap_err();
        assert!(matches!(err, Error::NotRenormalizable { .. }));
    }

    #[test]
    fn decayed_state_counts_absorbed_norm() {
        let absorber = AbsorberProfile::default();
        let grid = padded_grid(DEFAULT_PHI_MIN, DEFAULT_INTERIOR_END, 0.02, &absorber).unwrap();
        let gamma = 0.6;
        let psi = well_ground_state(4.0, gamma, grid).unwrap();
        let (out, _) = evolve(
            &psi,
            0.0,
            1000.0,
            0.02,
            4.0,
            &Bias::Fixed(gamma),
            &absorber,
            usize::MAX,
        )
        .unwrap();
        let cut = measurement_cut(gamma).unwrap();
        let m = measure(&out, cut).unwrap();
        assert!(m.absorbed > 0.0 && m.beyond_cut > 0.0);
        assert!((m.p - (m.absorbed + m.beyond_cut)).abs() < 1e-15);
        let inside = out.probability_in(grid.phi_min, cut).unwrap();
        assert!((m.p - (1.0 - inside)).abs() < 1e-10);
    }

    #[test]
    fn single_measurement_protocol() {
        let params = NormalizedParams::new(4.0, 20.0, 1, 0.02).unwrap();
        let absorber = AbsorberProfile::default();
        let grid = padded_grid(DEFAULT_PHI_MIN, DEFAULT_INTERIOR_END, 0.02, &absorber).unwrap();
        let rec = run_protocol(&params, grid, &absorber).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec.gammas, vec![1.0]);
        assert_eq!(rec.pdf[0], rec.p[0]);
        assert!((rec.survival - (1.0 - rec.p[0])).abs() < 1e-15);
    }

    #[test]
    fn short_protocol_record_is_consistent() {
        let params = NormalizedParams::new(4.0, 60.0, 12, 0.02).unwrap();
        let absorber = AbsorberProfile::default();
        let grid = padded_grid(DEFAULT_PHI_MIN, DEFAULT_INTERIOR_END, 0.02, &absorber).unwrap();
        let rec = run_protocol(&params, grid, &absorber).unwrap();
        assert!(rec.is_complete());
        assert!(rec.p.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!((rec.total_switch() + rec.survival - 1.0).abs() < 1e-10);
        // a fast ramp pushes switching to high bias
        let late: f64 = rec.pdf[7..].iter().sum();
        assert!(late > 0.9 * rec.total_switch(), "{:?}", rec.pdf);
        let mut csv = Vec::new();
        rec.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("n,gamma,p,pdf\n1,"));
    }

    #[test]
    fn failure_keeps_partial_record() {
        let params = NormalizedParams::new(4.0, 40.0, 4, 0.02).unwrap();
        let absorber = AbsorberProfile::default();
        // too narrow to hold [-π, π]
        let grid = padded_grid(-1.0, 8.0, 0.02, &absorber).unwrap();
        let err = run_protocol(&params, grid, &absorber).unwrap_err();
        assert!(err.partial.is_empty());
        assert!(err.source.is_config());
    }
}
