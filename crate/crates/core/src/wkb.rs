//! Semiclassical escape rate and the switching distributions it implies
//! for a linear bias ramp.
//!
//! All exponents `T ∫Γ` are carried in log space so that ramp times far
//! beyond what the wave-equation solver can reach (up to ~1e9) stay finite.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::fmt_f64;
use crate::potential::{barrier_height, plasma_frequency};

/// Coefficient of `ΔU/ω_p` in the exponent of the escape rate.
pub const EXPONENT_COEFF: f64 = 7.2;
/// Coefficient under the square root of the attempt prefactor.
pub const PREFACTOR_COEFF: f64 = 120.0 * PI;

/// Absolute tolerance on the exponent `T ∫Γ`.
pub const EXPONENT_TOL: f64 = 1e-12;
const RELATIVE_TOL: f64 = 1e-14;
const MAX_INTERVALS: usize = 200;

/// Largest `T Γ h` taken by one Runge-Kutta step.
const ODE_STIFFNESS_STEP: f64 = 0.01;
/// Largest Runge-Kutta step in γ.
const ODE_MAX_STEP: f64 = 1e-3;
const ODE_MAX_STEPS: usize = 100_000_000;

/// `ln Γ` from the semiclassical formula; `-∞` at γ = 1 where the barrier
/// is gone and the prefactor vanishes.
pub fn wkb_log_rate(gamma: f64, v0: f64) -> Result<f64> {
    if !(v0 > 0.0) || !v0.is_finite() {
        return Err(invalid("v0", "must be positive and finite"));
    }
    let du = barrier_height(gamma, v0)?;
    let wp = plasma_frequency(gamma, v0)?;
    if gamma == 1.0 || du == 0.0 || wp == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let x = EXPONENT_COEFF * du / wp;
    Ok((wp / (2.0 * PI)).ln() + 0.5 * (PREFACTOR_COEFF * x).ln() - x)
}

/// Escape rate `Γ = (ω_p/2π) √(120π·7.2ΔU/ω_p) exp(-7.2ΔU/ω_p)` in units of
/// `E_C/ħ`. Returns 0 at the degenerate bias γ = 1.
pub fn wkb_rate(gamma: f64, v0: f64) -> Result<f64> {
    wkb_log_rate(gamma, v0).map(f64::exp)
}

/// Where a [`RateFunction`] comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    AnalyticWkb,
    NumericFit,
    Constant,
}

impl RateSource {
    pub fn as_str(self) -> &'static str {
        match self {
            RateSource::AnalyticWkb => "analytic-wkb",
            RateSource::NumericFit => "numeric-fit",
            RateSource::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum RateKind {
    Wkb,
    Constant(f64),
    /// Piecewise-linear `ln Γ` through fitted samples. Outside the sampled
    /// range the semiclassical curve is followed, shifted to meet the
    /// nearest sample.
    Table {
        gammas: Vec<f64>,
        log_rates: Vec<f64>,
    },
}

/// Escape rate as a function of bias at fixed `V₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    v0: f64,
    kind: RateKind,
}

impl RateFunction {
    pub fn wkb(v0: f64) -> Result<Self> {
        wkb_log_rate(0.5, v0)?;
        Ok(Self {
            v0,
            kind: RateKind::Wkb,
        })
    }

    /// Bias-independent rate; mostly useful as a closed-form reference.
    pub fn constant(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(invalid("rate", "must be positive and finite"));
        }
        Ok(Self {
            v0: f64::NAN,
            kind: RateKind::Constant(rate),
        })
    }

    /// Interpolates fitted rates; `gammas` must be strictly increasing in
    /// `(0, 1)` and every rate positive.
    pub fn from_samples(v0: f64, gammas: &[f64], rates: &[f64]) -> Result<Self> {
        wkb_log_rate(0.5, v0)?;
        if gammas.is_empty() || gammas.len() != rates.len() {
            return Err(invalid(
                "rates",
                "need one rate per bias and at least one sample",
            ));
        }
        if gammas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("gammas", "must be strictly increasing"));
        }
        if gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(invalid("gammas", "must lie in (0, 1)"));
        }
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(invalid("rates", "must be positive and finite"));
        }
        Ok(Self {
            v0,
            kind: RateKind::Table {
                gammas: gammas.to_vec(),
                log_rates: rates.iter().map(|r| r.ln()).collect(),
            },
        })
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn source(&self) -> RateSource {
        match self.kind {
            RateKind::Wkb => RateSource::AnalyticWkb,
            RateKind::Constant(_) => RateSource::Constant,
            RateKind::Table { .. } => RateSource::NumericFit,
        }
    }

    pub fn log_rate(&self, gamma: f64) -> Result<f64> {
        match &self.kind {
            RateKind::Wkb => wkb_log_rate(gamma, self.v0),
            RateKind::Constant(c) => {
                check_unit(gamma)?;
                Ok(c.ln())
            }
            RateKind::Table { gammas, log_rates } => {
                check_unit(gamma)?;
                let last = gammas.len() - 1;
                let anchored = |k: usize| -> Result<f64> {
                    let shift = log_rates[k] - wkb_log_rate(gammas[k], self.v0)?;
                    Ok(wkb_log_rate(gamma, self.v0)? + shift)
                };
                if gamma <= gammas[0] {
                    return anchored(0);
                }
                if gamma >= gammas[last] {
                    return anchored(last);
                }
                let k = gammas.partition_point(|g| *g <= gamma) - 1;
                let s = (gamma - gammas[k]) / (gammas[k + 1] - gammas[k]);
                Ok(log_rates[k] + s * (log_rates[k + 1] - log_rates[k]))
            }
        }
    }

    pub fn rate(&self, gamma: f64) -> Result<f64> {
        self.log_rate(gamma).map(f64::exp)
    }
}

fn check_unit(gamma: f64) -> Result<()> {
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

fn check_grid(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(invalid("gamma_grid", "must not be empty"));
    }
    if gammas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("gamma_grid", "must be strictly increasing"));
    }
    gammas.iter().try_for_each(|g| check_unit(*g))
}

fn check_ramp(ramp_time: f64) -> Result<()> {
    if ramp_time > 0.0 && ramp_time.is_finite() {
        Ok(())
    } else {
        Err(invalid("ramp_time", "must be positive and finite"))
    }
}

// 15-point Kronrod rule with its embedded 7-point Gauss rule on [-1, 1].
const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod(f: &impl Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c)?;
    let mut k = KRONROD_WEIGHTS[7] * fc;
    let mut g = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = r * KRONROD_NODES[i];
        let pair = f(c - x)? + f(c + x)?;
        k += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            g += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    Ok((k * r, ((k - g) * r).abs()))
}

/// Global adaptive Gauss-Kronrod: the interval with the largest error
/// estimate is bisected until the summed estimate meets the tolerance or the
/// interval budget runs out (rounding noise in the integrand).
fn adaptive(f: &impl Fn(f64) -> Result<f64>, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    let (value, err) = kronrod(f, a, b)?;
    let mut parts = vec![(a, b, value, err)];
    let (mut total, mut total_err) = (value, err);
    while total_err > abs_tol.max(RELATIVE_TOL * total.abs()) && parts.len() < MAX_INTERVALS {
        let worst = (0..parts.len())
            .max_by(|&i, &j| parts[i].3.total_cmp(&parts[j].3))
            .unwrap();
        let (lo, hi, v, e) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            parts.push((lo, hi, v, 0.0));
            total_err -= e;
            continue;
        }
        let left = kronrod(f, lo, mid)?;
        let right = kronrod(f, mid, hi)?;
        parts.push((lo, mid, left.0, left.1));
        parts.push((mid, hi, right.0, right.1));
        total = parts.iter().map(|p| p.2).sum();
        total_err = parts.iter().map(|p| p.3).sum();
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "rate integral on [{a}, {b}] is not finite"
        )));
    }
    Ok(total)
}

/// `∫_a^b Γ(γ) dγ` by adaptive Gauss-Kronrod quadrature.
pub fn integrate_rate(rate: &RateFunction, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    adaptive(&|g| rate.rate(g), a, b, abs_tol)
}

/// `∫_0^γ Γ` at every point of an increasing grid, with the exponent
/// `T ∫Γ` resolved to [`EXPONENT_TOL`].
pub fn cumulative_rate_integral(
    ramp_time: f64,
    rate: &RateFunction,
    gammas: &[f64],
) -> Result<Vec<f64>> {
    check_ramp(ramp_time)?;
    check_grid(gammas)?;
    let tol = EXPONENT_TOL / ramp_time;
    let mut acc = 0.0;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(gammas.len());
    for &g in gammas {
        acc += integrate_rate(rate, prev, g, tol * (g - prev))?;
        out.push(acc);
        prev = g;
    }
    Ok(out)
}

/// Switching distribution of a continuously ramped bias without
/// measurements, normalized over `γ ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticDistribution {
    pub ramp_time: f64,
    pub gammas: Vec<f64>,
    /// Probability density in γ.
    pub pdf: Vec<f64>,
    /// Cumulative probability, reaching 1 at γ = 1.
    pub cdf: Vec<f64>,
    /// Probability of switching at all during the ramp, `1 - exp(-T∫₀¹Γ)`.
    pub normalization: f64,
}

impl AdiabaticDistribution {
    /// Writes `gamma,pdf,cdf` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "gamma,pdf,cdf")?;
        for ((g, p), c) in self.gammas.iter().zip(&self.pdf).zip(&self.cdf) {
            writeln!(out, "{},{},{}", fmt_f64(*g), fmt_f64(*p), fmt_f64(*c))?;
        }
        Ok(())
    }
}

/// `P(γ) = T Γ(γ) exp(-T ∫₀^γ Γ) / 𝒩` with `𝒩 = 1 - exp(-T ∫₀¹ Γ)`.
pub fn adiabatic_pdf(
    ramp_time: f64,
    rate: &RateFunction,
    gammas: &[f64],
) -> Result<AdiabaticDistribution> {
    let cumulative = cumulative_rate_integral(ramp_time, rate, gammas)?;
    let last = *gammas.last().unwrap();
    let total = cumulative.last().unwrap()
        + integrate_rate(rate, last, 1.0, EXPONENT_TOL / ramp_time * (1.0 - last))?;
    let normalization = -(-ramp_time * total).exp_m1();
    if !(normalization > 0.0) {
        return Err(Error::Numerical(format!(
            "switching probability over the ramp underflows (T∫Γ = {:e})",
            ramp_time * total
        )));
    }
    let log_t = ramp_time.ln();
    let log_norm = normalization.ln();
    let mut pdf = Vec::with_capacity(gammas.len());
    let mut cdf = Vec::with_capacity(gammas.len());
    for (&g, &integral) in gammas.iter().zip(&cumulative) {
        let exponent = ramp_time * integral;
        pdf.push((log_t + rate.log_rate(g)? - exponent - log_norm).exp());
        cdf.push(((-exponent).exp_m1() / -normalization).min(1.0));
    }
    Ok(AdiabaticDistribution {
        ramp_time,
        gammas: gammas.to_vec(),
        pdf,
        cdf,
        normalization,
    })
}

/// Integrates `dC/dγ = T Γ(γ) (1 - C)`, `C(0) = 0` with classical
/// fourth-order Runge-Kutta and returns the unnormalized cumulative switching
/// probability on `gammas`.
///
/// The state carried is `1 - C`, so the tail keeps full relative precision.
/// Steps are capped at `1e-3` in γ and at `T Γ h = 0.01`.
pub fn adiabatic_cdf_ode(ramp_time: f64, rate: &RateFunction, gammas: &[f64]) -> Result<Vec<f64>> {
    check_ramp(ramp_time)?;
    check_grid(gammas)?;
    let t = ramp_time;
    let rhs = |g: f64, s: f64| -> Result<f64> { Ok(-t * rate.rate(g)? * s) };
    let mut s = 1.0;
    let mut prev = 0.0;
    let mut steps_taken = 0usize;
    let mut out = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let mut x = prev;
        while x < g && s > 0.0 {
            let mut h = (g - x).min(ODE_MAX_STEP);
            let stiffness = t * rate.rate(x)?.max(rate.rate(x + h)?);
            if stiffness * h > ODE_STIFFNESS_STEP {
                h = ODE_STIFFNESS_STEP / stiffness;
            }
            steps_taken += 1;
            if steps_taken > ODE_MAX_STEPS || !(x + h > x) {
                return Err(Error::Numerical(format!(
                    "step size underflow integrating the switching CDF near γ = {x}"
                )));
            }
            let k1 = rhs(x, s)?;
            let k2 = rhs(x + 0.5 * h, s + 0.5 * h * k1)?;
            let k3 = rhs(x + 0.5 * h, s + 0.5 * h * k2)?;
            let k4 = rhs(x + h, s + h * k3)?;
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            // 1 - s already rounds to 1
            if s < 1e-4 * f64::EPSILON {
                s = 0.0;
            }
            x = if g - x - h < 1e-15 * g { g } else { x + h };
        }
        out.push(1.0 - s);
        prev = g;
    }
    Ok(out)
}

/// Discrete switching distribution for `N` measurements with an
/// intra-measurement survival correction `F(γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDistribution {
    pub ramp_time: f64,
    pub measurements: usize,
    /// `γ_k = k / N`, `k = 1..=N`.
    pub gammas: Vec<f64>,
    pub pdf: Vec<f64>,
    /// `S_k`, the probability of no switch through measurement `k`.
    pub survival: Vec<f64>,
    /// Measurements whose survival factor `F e^{-Γ T/N}` exceeded one and
    /// was clamped.
    pub clamped: Vec<usize>,
    /// Measurements where `F < 1`.
    pub below_unity: Vec<usize>,
    pub warnings: Vec<String>,
}

impl MeasuredDistribution {
    pub fn cdf(&self) -> Vec<f64> {
        self.survival.iter().map(|s| 1.0 - s).collect()
    }

    pub fn total_switch(&self) -> f64 {
        1.0 - self.survival.last().copied().unwrap_or(1.0)
    }

    /// Writes `n,gamma,pdf,cdf` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,gamma,pdf,cdf")?;
        for (k, ((g, p), s)) in self
            .gammas
            .iter()
            .zip(&self.pdf)
            .zip(&self.survival)
            .enumerate()
        {
            writeln!(
                out,
                "{},{},{},{}",
                k + 1,
                fmt_f64(*g),
                fmt_f64(*p),
                fmt_f64(1.0 - s)
            )?;
        }
        Ok(())
    }
}

/// Survival recursion `S_k = min(1, F(γ_k) e^{-Γ(γ_k) T/N}) S_{k-1}`,
/// `S_0 = 1`, `pdf_k = S_{k-1} - S_k`.
///
/// `relaxation_time` is the post-projection transient for this `V₀`; when
/// `T/N` does not exceed it a validity warning is attached.
pub fn measured_adiabatic_pdf(
    ramp_time: f64,
    measurements: usize,
    rate: &RateFunction,
    prefactor: impl Fn(f64) -> f64,
    relaxation_time: Option<f64>,
) -> Result<MeasuredDistribution> {
    check_ramp(ramp_time)?;
    if measurements == 0 {
        return Err(invalid("measurements", "must be at least 1"));
    }
    let interval = ramp_time / measurements as f64;
    let mut warnings = Vec::new();
    if let Some(tau) = relaxation_time {
        if interval <= tau {
            warnings.push(format!(
                "T/N = {interval} does not exceed the relaxation time {tau}; the recursion is outside its validity range"
            ));
        }
    }
    let mut s_prev = 1.0;
    let mut out = MeasuredDistribution {
        ramp_time,
        measurements,
        gammas: Vec::with_capacity(measurements),
        pdf: Vec::with_capacity(measurements),
        survival: Vec::with_capacity(measurements),
        clamped: Vec::new(),
        below_unity: Vec::new(),
        warnings,
    };
    for k in 1..=measurements {
        let g = k as f64 / measurements as f64;
        let f = prefactor(g);
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::Domain {
                quantity: "prefactor",
                value: f,
                domain: "(0, inf)",
            });
        }
        if f < 1.0 {
            out.below_unity.push(k);
        }
        let mut factor = (f.ln() - rate.rate(g)? * interval).exp();
        if factor > 1.0 {
            factor = 1.0;
            out.clamped.push(k);
        }
        let s = factor * s_prev;
        if s > s_prev {
            return Err(Error::Numerical(format!(
                "survival increased at measurement {k}"
            )));
        }
        out.gammas.push(g);
        out.pdf.push(s_prev - s);
        out.survival.push(s);
        s_prev = s;
    }
    if !out.below_unity.is_empty() {
        out.warnings.push(format!(
            "prefactor below one at {} of {} measurements",
            out.below_unity.len(),
            measurements
        ));
    }
    if !out.clamped.is_empty() {
        out.warnings.push(format!(
            "survival factor clamped to one at {} measurements",
            out.clamped.len()
        ));
    }
    Ok(out)
}

/// `n + 1` equally spaced points on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const V0: f64 = 4.0;

    /// Independent evaluation of the semiclassical rate.
    fn rate_oracle(g: f64, v0: f64) -> f64 {
        let du = 2.0 * v0 * ((1.0 - g * g).sqrt() - g * g.acos());
        let wp = (1.0 - g * g).powf(0.25) * v0.sqrt();
        let x = 7.2 * du / wp;
        wp / (2.0 * PI) * (120.0 * PI * x).sqrt() * (-x).exp()
    }

    fn argmax(xs: &[f64]) -> usize {
        (0..xs.len())
            .max_by(|&a, &b| xs[a].total_cmp(&xs[b]))
            .unwrap()
    }

    #[test]
    fn zero_bias_exponent() {
        let expected = (2.0 / (2.0 * PI)).ln() + 0.5 * (120.0 * PI * 28.8).ln() - 28.8;
        assert!((wkb_log_rate(0.0, V0).unwrap() - expected).abs() < 1e-12);
        assert!(wkb_rate(0.0, V0).unwrap() < 1e-10);
    }

    #[test]
    fn matches_direct_evaluation() {
        for g in [0.1, 0.45, 0.5, 0.55, 0.6, 0.9] {
            let r = wkb_rate(g, V0).unwrap();
            assert!((r / rate_oracle(g, V0) - 1.0).abs() < 1e-12);
        }
        let ratio = wkb_rate(0.6, V0).unwrap() / wkb_rate(0.45, V0).unwrap();
        assert!(ratio > 10.0);
        assert!((ratio / (rate_oracle(0.6, V0) / rate_oracle(0.45, V0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_invalid_bias() {
        assert_eq!(wkb_rate(1.0, V0).unwrap(), 0.0);
        assert!(wkb_rate(1.1, V0).is_err());
        assert!(wkb_rate(0.5, 0.0).is_err());
    }

    #[test]
    fn monotone_below_the_prefactor_turnover() {
        for k in 1..=90 {
            let g = k as f64 / 100.0;
            assert!(
                wkb_rate(g + 0.01, V0).unwrap() > wkb_rate(g, V0).unwrap(),
                "{g}"
            );
        }
        // the vanishing attempt frequency wins close to γ = 1
        assert!(wkb_rate(0.99, V0).unwrap() < wkb_rate(0.94, V0).unwrap());
    }

    #[test]
    fn table_rate_interpolates_and_extends() {
        let gammas = [0.45, 0.5, 0.6];
        let rates: Vec<f64> = gammas
            .iter()
            .map(|g| 0.5 * wkb_rate(*g, V0).unwrap())
            .collect();
        let table = RateFunction::from_samples(V0, &gammas, &rates).unwrap();
        assert_eq!(table.source(), RateSource::NumericFit);
        for g in [0.2, 0.45, 0.55, 0.6, 0.8] {
            let expected = 0.5 * wkb_rate(g, V0).unwrap();
            let got = table.rate(g).unwrap();
            let tol = if (0.5..0.6).contains(&g) { 0.1 } else { 1e-12 };
            assert!(
                (got / expected - 1.0).abs() < tol,
                "{g}: {got} vs {expected}"
            );
        }
        let mid = table.log_rate(0.55).unwrap();
        assert!((mid - 0.5 * (rates[1].ln() + rates[2].ln())).abs() < 1e-12);
        assert!(RateFunction::from_samples(V0, &[0.5, 0.4], &[1.0, 1.0]).is_err());
        assert!(RateFunction::from_samples(V0, &[0.5], &[0.0]).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let c = RateFunction::constant(3.0).unwrap();
        assert!((integrate_rate(&c, 0.1, 0.7, 1e-14).unwrap() - 1.8).abs() < 1e-14);
        let w = RateFunction::wkb(V0).unwrap();
        // fine composite Simpson as an independent reference
        let n = 200_000;
        let h = 0.3 / n as f64;
        let simpson: f64 = (0..=n)
            .map(|k| {
                let wgt = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                wgt * rate_oracle(0.4 + k as f64 * h, V0)
            })
            .sum::<f64>()
            * h
            / 3.0;
        let gk = integrate_rate(&w, 0.4, 0.7, 1e-16).unwrap();
        assert!((gk / simpson - 1.0).abs() < 1e-11, "{gk} {simpson}");
    }

    #[test]
    fn constant_rate_gives_truncated_exponential() {
        let (c, t) = (2.0, 3.0);
        let rate = RateFunction::constant(c).unwrap();
        let grid = unit_grid(200);
        let dist = adiabatic_pdf(t, &rate, &grid).unwrap();
        let norm = 1.0 - (-c * t).exp();
        assert!((dist.normalization - norm).abs() < 1e-15);
        for (k, &g) in grid.iter().enumerate() {
            let pdf = c * t * (-c * t * g).exp() / norm;
            let cdf = (1.0 - (-c * t * g).exp()) / norm;
            assert!((dist.pdf[k] - pdf).abs() < 1e-8);
            assert!((dist.cdf[k] - cdf).abs() < 1e-8);
        }
        let ode = adiabatic_cdf_ode(t, &rate, &grid).unwrap();
        for (k, &g) in grid.iter().enumerate() {
            assert!((ode[k] - (1.0 - (-c * t * g).exp())).abs() < 1e-8);
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let rate = RateFunction::wkb(V0).unwrap();
        let n = 20_000;
        let grid = unit_grid(n);
        let dist = adiabatic_pdf(800.0, &rate, &grid).unwrap();
        let h = 1.0 / n as f64;
        let simpson: f64 = dist
            .pdf
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * p
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((simpson - 1.0).abs() < 1e-8, "{simpson}");
        assert!((dist.cdf[n] - 1.0).abs() < 1e-14);
        assert!(dist.cdf.windows(2).all(|w| w[1] >= w[0]));
        assert!(dist.pdf.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn ode_matches_closed_form() {
        let rate = RateFunction::wkb(V0).unwrap();
        let grid = unit_grid(1000);
        for t in [200.0, 800.0, 1e4] {
            let ode = adiabatic_cdf_ode(t, &rate, &grid).unwrap();
            let dist = adiabatic_pdf(t, &rate, &grid).unwrap();
            for (k, c) in ode.iter().enumerate() {
                let closed = dist.cdf[k] * dist.normalization;
                assert!(
                    (c - closed).abs() < 1e-8,
                    "T={t} γ={}: {c} vs {closed}",
                    grid[k]
                );
            }
            assert!((ode[1000] - dist.normalization).abs() < 1e-8);
        }
    }

    #[test]
    fn ode_derivative_recovers_density() {
        let rate = RateFunction::wkb(V0).unwrap();
        let t = 800.0;
        let h = 1e-4;
        let centres = [0.55, 0.6, 0.65, 0.7, 0.75];
        for &g in &centres {
            let stencil: Vec<f64> = (-2..=2).map(|j| g + j as f64 * h).collect();
            let c = adiabatic_cdf_ode(t, &rate, &stencil).unwrap();
            let deriv = (c[0] - 8.0 * c[1] + 8.0 * c[3] - c[4]) / (12.0 * h);
            let dist = adiabatic_pdf(t, &rate, &[g]).unwrap();
            let expected = dist.pdf[0] * dist.normalization;
            assert!(
                (deriv - expected).abs() < 1e-6 * expected.max(1.0),
                "{g}: {deriv} vs {expected}"
            );
        }
    }

    #[test]
    fn peak_moves_down_with_slower_ramps() {
        let rate = RateFunction::wkb(V0).unwrap();
        let grid = unit_grid(4000);
        let peaks: Vec<f64> = [200.0, 800.0, 3200.0]
            .iter()
            .map(|&t| grid[argmax(&adiabatic_pdf(t, &rate, &grid).unwrap().pdf)])
            .collect();
        assert!(peaks[0] > peaks[1] && peaks[1] > peaks[2], "{peaks:?}");
    }

    #[test]
    fn extreme_ramp_times_stay_finite() {
        let rate = RateFunction::wkb(V0).unwrap();
        let grid = unit_grid(2000);
        for t in [1e6, 1e9] {
            let dist = adiabatic_pdf(t, &rate, &grid).unwrap();
            assert!(dist.pdf.iter().all(|p| p.is_finite() && *p >= 0.0));
            assert!(dist.cdf.iter().all(|c| (0.0..=1.0).contains(c)));
            assert_eq!(dist.normalization, 1.0);
            let ode = adiabatic_cdf_ode(t, &rate, &grid).unwrap();
            assert!(ode.iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn measured_recursion_without_prefactor() {
        let rate = RateFunction::wkb(V0).unwrap();
        let dist = measured_adiabatic_pdf(800.0, 50, &rate, |_| 1.0, None).unwrap();
        assert!(dist.clamped.is_empty() && dist.warnings.is_empty());
        let total: f64 = dist.pdf.iter().sum();
        assert!((total - dist.total_switch()).abs() < 1e-14);
        assert!(dist.pdf.iter().all(|p| *p >= 0.0));
        // the recursion is the exact product of per-interval survivals
        let mut s = 1.0;
        for (k, &g) in dist.gammas.iter().enumerate() {
            s *= (-rate.rate(g).unwrap() * 16.0).exp();
            assert!((dist.survival[k] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn measured_recursion_converges_at_first_order() {
        let rate = RateFunction::wkb(V0).unwrap();
        let t = 800.0;
        let sup_error = |n: usize| {
            let m = measured_adiabatic_pdf(t, n, &rate, |_| 1.0, None).unwrap();
            let exact = adiabatic_cdf_ode(t, &rate, &m.gammas).unwrap();
            m.cdf()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let errors: Vec<f64> = [100, 200, 400, 800].iter().map(|&n| sup_error(n)).collect();
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "{errors:?}");
        }
    }

    #[test]
    fn measured_recursion_flags() {
        let rate = RateFunction::wkb(V0).unwrap();
        let big = measured_adiabatic_pdf(800.0, 100, &rate, |_| 1.5, Some(20.0)).unwrap();
        assert!(!big.clamped.is_empty());
        assert!(big.warnings.iter().any(|w| w.contains("clamped")));
        assert!(big.survival.windows(2).all(|w| w[1] <= w[0]));
        let small = measured_adiabatic_pdf(800.0, 100, &rate, |_| 0.99, Some(20.0)).unwrap();
        assert_eq!(small.below_unity.len(), 100);
        assert!(small.warnings.iter().any(|w| w.contains("below one")));
        // T/N = 8 is shorter than the relaxation time
        assert!(small.warnings.iter().any(|w| w.contains("validity")));
        assert!(measured_adiabatic_pdf(800.0, 100, &rate, |_| -1.0, None).is_err());
        assert!(measured_adiabatic_pdf(800.0, 0, &rate, |_| 1.0, None).is_err());
    }

    #[test]
    fn csv_layout() {
        let rate = RateFunction::wkb(V0).unwrap();
        let dist = adiabatic_pdf(800.0, &rate, &unit_grid(10)).unwrap();
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.starts_with("gamma,pdf,cdf\n"));
    }
}
