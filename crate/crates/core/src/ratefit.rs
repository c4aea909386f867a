//! Decay rates, relaxation times and survival prefactors from fixed-bias
//! evolutions of a freshly projected state.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::absorber::AbsorberProfile;
use crate::error::{invalid, Error, Result};
use crate::initial::well_ground_state;
use crate::io::fmt_f64;
use crate::measure::{measurement_cut, project_no_switch, switching_probability};
use crate::potential::Bias;
use crate::propagate::{DecayTrace, Propagator};
use crate::state::{Grid, WaveFunction};
use crate::wkb::{wkb_rate, RateFunction};

/// RMS misfit of `ln P` above which a fit is flagged.
pub const QUALITY_RMS: f64 = 0.05;
/// Tolerance below one before a prefactor is reported as suspicious.
pub const PREFACTOR_SLACK: f64 = 1e-3;
/// Decay length, in lifetimes, after which a rate-curve trace is cut.
pub const TAIL_E_FOLDS: f64 = 20.0;

const MIN_SAMPLES: usize = 4;
const GOLDEN_ITERATIONS: usize = 80;

/// Two-segment fit of `ln P(t)`: flat up to the breakpoint, then linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Bias of the evolution, when known.
    pub gamma: Option<f64>,
    /// Decay rate of the linear tail.
    pub rate: f64,
    /// Breakpoint, measured from the first sample.
    pub relaxation_time: f64,
    /// Time span of the linear tail, on the trace's own clock.
    pub fit_window: (f64, f64),
    /// RMS of the `ln P` residuals over the whole trace.
    pub residual: f64,
    /// Fitted `ln P` on the plateau.
    pub log_plateau: f64,
}

impl RateFit {
    pub fn quality_ok(&self) -> bool {
        self.residual <= QUALITY_RMS
    }

    /// Fitted `P` a time `t` after the first sample.
    pub fn survival(&self, t: f64) -> f64 {
        (self.log_plateau - self.rate * (t - self.relaxation_time).max(0.0)).exp()
    }
}

struct Hinge {
    tau: f64,
    intercept: f64,
    rate: f64,
    sse: f64,
}

fn hinge_fit(t: &[f64], y: &[f64], tau: f64) -> Hinge {
    let n = t.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(y) {
        let x = (ti - tau).max(0.0);
        sx += x;
        sy += yi;
        sxx += x * x;
        sxy += x * yi;
    }
    let var = sxx - sx * sx / n;
    let slope = if var > 0.0 {
        (sxy - sx * sy / n) / var
    } else {
        0.0
    };
    let intercept = (sy - slope * sx) / n;
    let sse = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let r = yi - intercept - slope * (ti - tau).max(0.0);
            r * r
        })
        .sum();
    Hinge {
        tau,
        intercept,
        rate: -slope,
        sse,
    }
}

/// Fits `ln P_in(t)` with a plateau followed by exponential decay.
///
/// Every sample time is tried as the breakpoint and the best one is refined
/// by golden-section search between its neighbours.
pub fn fit_decay(trace: &DecayTrace) -> Result<RateFit> {
    if trace.len() < MIN_SAMPLES {
        return Err(Error::InsufficientDecay(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            trace.len()
        )));
    }
    if trace.in_domain_probability.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InsufficientDecay(
            "trace reaches zero probability".into(),
        ));
    }
    let t0 = trace.times[0];
    let t: Vec<f64> = trace.times.iter().map(|x| x - t0).collect();
    let y: Vec<f64> = trace.in_domain_probability.iter().map(|p| p.ln()).collect();
    let drop = y[0] - y[y.len() - 1];
    if !(drop > 1e-12) {
        return Err(Error::InsufficientDecay(format!(
            "ln P falls by only {drop:e}"
        )));
    }

    let candidates = t.len() - 2;
    let mut best = hinge_fit(&t, &y, t[0]);
    let mut best_k = 0;
    for k in 1..candidates {
        let h = hinge_fit(&t, &y, t[k]);
        if h.sse < best.sse {
            best = h;
            best_k = k;
        }
    }
    let (mut lo, mut hi) = (
        t[best_k.saturating_sub(1)],
        t[(best_k + 1).min(candidates - 1)],
    );
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = hinge_fit(&t, &y, x1).sse;
    let mut f2 = hinge_fit(&t, &y, x2).sse;
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = hinge_fit(&t, &y, x1).sse;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = hinge_fit(&t, &y, x2).sse;
        }
    }
    let refined = hinge_fit(&t, &y, 0.5 * (lo + hi));
    if refined.sse < best.sse {
        best = refined;
    }
    if !(best.rate > 0.0) {
        return Err(Error::InsufficientDecay(format!(
            "fitted tail rate {:e} is not positive",
            best.rate
        )));
    }
    let residual = (best.sse / t.len() as f64).sqrt();
    Ok(RateFit {
        gamma: None,
        rate: best.rate,
        relaxation_time: best.tau,
        fit_window: (t0 + best.tau, t0 + t[t.len() - 1]),
        residual,
        log_plateau: best.intercept,
    })
}

/// Model, grid and time step shared by the fixed-bias evolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySetup {
    pub v0: f64,
    pub grid: Grid,
    pub absorber: AbsorberProfile,
    pub dt: f64,
    /// Steps between trace samples.
    pub trace_stride: usize,
}

/// Trapped state at bias `gamma` right after a "no switch" outcome: the
/// hard-walled well ground state, projected at the barrier top.
pub fn post_projection_state(setup: &DecaySetup, gamma: f64) -> Result<(WaveFunction, f64)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain {
            quantity: "gamma",
            value: gamma,
            domain: "(0, 1)",
        });
    }
    let cut = measurement_cut(gamma)?;
    let psi = well_ground_state(setup.v0, gamma, setup.grid)?;
    let p = switching_probability(&psi, cut)?;
    Ok((project_no_switch(&psi, cut, p)?, cut))
}

/// Evolves the post-projection state at fixed `gamma` for `horizon` and
/// records its in-domain probability.
pub fn decay_trace(setup: &DecaySetup, gamma: f64, horizon: f64) -> Result<DecayTrace> {
    if !(horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    let (mut psi, _) = post_projection_state(setup, gamma)?;
    let mut prop = Propagator::new(setup.grid, setup.v0, setup.dt, &setup.absorber)?;
    prop.evolve(
        &mut psi,
        0.0,
        horizon,
        &Bias::Fixed(gamma),
        setup.trace_stride,
    )
}

/// One point of a rate curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub gamma: f64,
    pub wkb_rate: f64,
    pub fit: std::result::Result<RateFit, Error>,
}

/// Evolves and fits one bias point, keeping the trace when the evolution
/// succeeded.
///
/// The evolution stops after [`TAIL_E_FOLDS`] semiclassical lifetimes when
/// that comes before `horizon`.
pub fn rate_point(setup: &DecaySetup, gamma: f64, horizon: f64) -> (Option<DecayTrace>, RatePoint) {
    let wkb = wkb_rate(gamma, setup.v0).unwrap_or(f64::NAN);
    let span = if wkb > 0.0 {
        horizon.min(TAIL_E_FOLDS / wkb)
    } else {
        horizon
    };
    let (trace, fit) = match decay_trace(setup, gamma, span) {
        Ok(trace) => {
            let fit = fit_decay(&trace).map(|f| RateFit {
                gamma: Some(gamma),
                ..f
            });
            (Some(trace), fit)
        }
        Err(e) => (None, Err(e)),
    };
    (
        trace,
        RatePoint {
            gamma,
            wkb_rate: wkb,
            fit,
        },
    )
}

/// Fitted decay rate at each bias. Points are independent and run in
/// parallel; a failed point keeps its error and the curve continues.
pub fn rate_curve(setup: &DecaySetup, gammas: &[f64], horizon: f64) -> Vec<RatePoint> {
    gammas
        .par_iter()
        .map(|&gamma| rate_point(setup, gamma, horizon).1)
        .collect()
}

/// Rate function interpolating the successful points of a rate curve.
pub fn numeric_rate(v0: f64, points: &[RatePoint]) -> Result<RateFunction> {
    let mut ok: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.fit.as_ref().ok().map(|f| (p.gamma, f.rate)))
        .collect();
    ok.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (g, r): (Vec<f64>, Vec<f64>) = ok.into_iter().unzip();
    RateFunction::from_samples(v0, &g, &r)
}

/// Survival correction over one measurement interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorSample {
    pub gamma: f64,
    /// `F = P_survive(T/N) / exp(-Γ T/N)`.
    pub prefactor: f64,
    /// Probability of no switch after one interval.
    pub survival: f64,
    pub rate: f64,
    pub warning: Option<String>,
}

fn prefactor_warning(f: f64) -> Option<String> {
    (f < 1.0 - PREFACTOR_SLACK).then(|| format!("prefactor {f} is below one"))
}

/// `F = [P(t₀ + T/N) / P(t₀)] · exp(Γ T/N)` read off a trace, with `P`
/// interpolated log-linearly between samples.
pub fn prefactor_from_trace(trace: &DecayTrace, rate: f64, interval: f64) -> Result<f64> {
    if trace.len() < 2 || !(interval > 0.0) {
        return Err(invalid(
            "interval",
            "needs a positive interval and two samples",
        ));
    }
    let t0 = trace.times[0];
    let target = t0 + interval;
    let k = trace.times.partition_point(|t| *t < target);
    if k == trace.len() {
        return Err(invalid("interval", "extends beyond the end of the trace"));
    }
    let p = &trace.in_domain_probability;
    let log_p = if k == 0 || trace.times[k] == target {
        p[k].ln()
    } else {
        let s = (target - trace.times[k - 1]) / (trace.times[k] - trace.times[k - 1]);
        (1.0 - s) * p[k - 1].ln() + s * p[k].ln()
    };
    Ok((log_p - p[0].ln() + rate * interval).exp())
}

/// Measured `F(γ)`: evolve the post-projection state for one interval
/// `T/N` at fixed bias, measure, and compare the no-switch probability with
/// the pure exponential of `rate`.
pub fn prefactor_curve(
    setup: &DecaySetup,
    gammas: &[f64],
    interval: f64,
    rate: &RateFunction,
) -> Vec<std::result::Result<PrefactorSample, Error>> {
    gammas
        .par_iter()
        .map(|&gamma| {
            if !(interval > 0.0) {
                return Err(invalid("interval", "must be positive"));
            }
            let (mut psi, cut) = post_projection_state(setup, gamma)?;
            let mut prop = Propagator::new(setup.grid, setup.v0, setup.dt, &setup.absorber)?;
            prop.evolve(&mut psi, 0.0, interval, &Bias::Fixed(gamma), usize::MAX)?;
            let survival = 1.0 - switching_probability(&psi, cut)?;
            let r = rate.rate(gamma)?;
            let prefactor = survival * (r * interval).exp();
            Ok(PrefactorSample {
                gamma,
                prefactor,
                survival,
                rate: r,
                warning: prefactor_warning(prefactor),
            })
        })
        .collect()
}

/// Piecewise-linear `F(γ)` through measured samples, held constant beyond
/// the first and last sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorCurve {
    pub gammas: Vec<f64>,
    pub values: Vec<f64>,
}

impl PrefactorCurve {
    pub fn from_samples(samples: &[PrefactorSample]) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.gamma, s.prefactor)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.is_empty() {
            return Err(invalid("prefactor", "no samples"));
        }
        let (gammas, values) = pts.into_iter().unzip();
        Ok(Self { gammas, values })
    }

    pub fn eval(&self, gamma: f64) -> f64 {
        let n = self.gammas.len();
        if gamma <= self.gammas[0] {
            return self.values[0];
        }
        if gamma >= self.gammas[n - 1] {
            return self.values[n - 1];
        }
        let k = self.gammas.partition_point(|g| *g <= gamma) - 1;
        let s = (gamma - self.gammas[k]) / (self.gammas[k + 1] - self.gammas[k]);
        self.values[k] + s * (self.values[k + 1] - self.values[k])
    }
}

/// Writes `gamma,rate_num,rate_wkb,relaxation_time,prefactor,residual` rows;
/// missing values are written as `NaN`.
pub fn write_rate_csv<W: Write>(
    mut out: W,
    points: &[RatePoint],
    prefactors: Option<&[PrefactorSample]>,
) -> Result<()> {
    writeln!(
        out,
        "gamma,rate_num,rate_wkb,relaxation_time,prefactor,residual"
    )?;
    for p in points {
        let (rate, tau, residual) = match &p.fit {
            Ok(f) => (f.rate, f.relaxation_time, f.residual),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
        };
        let f = prefactors
            .and_then(|s| s.iter().find(|s| s.gamma == p.gamma))
            .map_or(f64::NAN, |s| s.prefactor);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(p.gamma),
            fmt_f64(rate),
            fmt_f64(p.wkb_rate),
            fmt_f64(tau),
            fmt_f64(f),
            fmt_f64(residual)
        )?;
    }
    Ok(())
}
