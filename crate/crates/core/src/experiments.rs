//! Parameter sweeps over the `(T, N)` plane, peak extraction, comparison
//! with the semiclassical models, and run manifests.
//!
//! Every command writes its files below an output root and records a JSON
//! manifest next to them. A manifest carries the full resolved
//! configuration, so [`replay`] regenerates the same files bit for bit.
//!
//! Sweeps use the layout `runs/<sweep-id>/<point-id>/` with one manifest per
//! point and an aggregate manifest in `runs/<sweep-id>/`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InitialState, RunConfig, SweepKind};
use crate::error::{invalid, Error, Result};
use crate::initial::{initial_state, periodic_ground_state, well_ground_state};
use crate::io::write_rows;
use crate::measure::{run_protocol, ProtocolError, SwitchingRecord};
use crate::potential::{Bias, BiasRamp};
use crate::propagate::Propagator;
use crate::ratefit::{
    numeric_rate, prefactor_curve, rate_curve, rate_point, write_rate_csv, DecaySetup,
    PrefactorCurve, PrefactorSample, RatePoint,
};
use crate::state::{Grid, GridSettings};
use crate::wkb::{adiabatic_pdf, measured_adiabatic_pdf, unit_grid, RateFunction};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fraction of the maximum a smoothed pdf must rise or fall by to count as
/// a separate extremum.
pub const UNIMODAL_TOLERANCE: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Peaks

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub gamma: f64,
    pub height: f64,
}

/// Maximum of a pdf sampled on a uniform grid, refined by the parabola
/// through the largest bin and its two neighbours. A maximum on the first
/// or last bin is returned unrefined.
pub fn peak_location(gammas: &[f64], pdf: &[f64]) -> Option<Peak> {
    let n = gammas.len().min(pdf.len());
    if n == 0 {
        return None;
    }
    let mut i = 0;
    for k in 1..n {
        if pdf[k] > pdf[i] {
            i = k;
        }
    }
    let at_bin = Peak {
        gamma: gammas[i],
        height: pdf[i],
    };
    if i == 0 || i + 1 == n {
        return Some(at_bin);
    }
    let (ym, y0, yp) = (pdf[i - 1], pdf[i], pdf[i + 1]);
    let curvature = ym - 2.0 * y0 + yp;
    if !(curvature < 0.0) {
        return Some(at_bin);
    }
    let delta = (0.5 * (ym - yp) / curvature).clamp(-0.5, 0.5);
    let spacing = 0.5 * (gammas[i + 1] - gammas[i - 1]);
    Some(Peak {
        gamma: gammas[i] + delta * spacing,
        height: y0 - 0.25 * (ym - yp) * delta,
    })
}

/// Single interior maximum after a three-bin moving average. Rises and
/// falls smaller than [`UNIMODAL_TOLERANCE`] of the maximum are ignored.
pub fn is_unimodal(pdf: &[f64]) -> bool {
    let n = pdf.len();
    if n < 3 {
        return false;
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            pdf[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let max = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return false;
    }
    let tol = UNIMODAL_TOLERANCE * max;
    let (mut lo, mut hi) = (smooth[0], smooth[0]);
    let mut rising = false;
    let mut peaks = 0;
    for &x in &smooth[1..] {
        if rising {
            hi = hi.max(x);
            if x < hi - tol {
                peaks += 1;
                rising = false;
                lo = x;
            }
        } else {
            lo = lo.min(x);
            if x > lo + tol {
                rising = true;
                hi = x;
            }
        }
    }
    peaks == 1
}

/// Kolmogorov distance between two distributions sampled on the same grid.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub ramp_time: f64,
    pub measurements: usize,
    pub peak_gamma: f64,
    pub peak_height: f64,
    pub total_switch: f64,
    pub unimodal: bool,
    /// Peak of the continuous semiclassical distribution at this ramp time.
    pub wkb_peak: Option<f64>,
    /// Largest peak shift under `dt/2` and `h/2`.
    pub gate_shift: Option<f64>,
    /// Set when the gate ran and the peak moved by a bin or more.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub rows: Vec<PeakRow>,
}

impl PeakTable {
    /// Writes one row per point; flags as 0/1 and missing values as `NaN`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.ramp_time,
                r.measurements as f64,
                r.peak_gamma,
                r.peak_height,
                r.total_switch,
                f64::from(u8::from(r.unimodal)),
                r.wkb_peak.unwrap_or(f64::NAN),
                r.gate_shift.unwrap_or(f64::NAN),
                f64::from(u8::from(r.flagged)),
            ]
        });
        write_rows(
            &mut out,
            &[
                "ramp_time",
                "measurements",
                "peak_gamma",
                "peak_height",
                "total_switch",
                "unimodal",
                "wkb_peak",
                "gate_shift",
                "flagged",
            ],
            rows,
        )
    }
}

// ---------------------------------------------------------------------------
// Protocol points and the convergence gate

/// Measured ramp at one `(T, N)` point with the configured grid.
pub fn run_point(
    config: &RunConfig,
    ramp_time: f64,
    measurements: usize,
) -> std::result::Result<SwitchingRecord, ProtocolError> {
    run_point_with(
        config,
        ramp_time,
        measurements,
        config.params.dt,
        &config.grid,
    )
}

fn run_point_with(
    config: &RunConfig,
    ramp_time: f64,
    measurements: usize,
    dt: f64,
    grid: &GridSettings,
) -> std::result::Result<SwitchingRecord, ProtocolError> {
    let empty = |e: Error| ProtocolError {
        partial: SwitchingRecord::from_probabilities(measurements.max(1), vec![])
            .expect("empty record"),
        source: e,
    };
    let mut params = config
        .point_params(ramp_time, measurements)
        .map_err(empty)?;
    params.dt = dt;
    let grid = grid.build(&config.absorber).map_err(empty)?;
    run_protocol(&params, grid, &config.absorber)
}

/// Peak movement of one point under halved time step and halved spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub base_peak: f64,
    pub half_dt_peak: f64,
    pub half_h_peak: f64,
    pub half_dt: SwitchingRecord,
    pub half_h: SwitchingRecord,
    /// Largest `|Δγ_M|` over the two refinements.
    pub shift: f64,
    /// Bin width `1/N`.
    pub bin: f64,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.shift < self.bin
    }

    /// Largest CDF difference between the base run and either refinement.
    pub fn cdf_band(&self, base: &SwitchingRecord) -> f64 {
        let c = base.cdf();
        sup_distance(&c, &self.half_dt.cdf()).max(sup_distance(&c, &self.half_h.cdf()))
    }
}

fn record_peak(record: &SwitchingRecord) -> Result<f64> {
    peak_location(&record.gammas, &record.pdf)
        .map(|p| p.gamma)
        .ok_or_else(|| Error::Numerical("empty switching record".into()))
}

/// Reruns a point with `dt/2` and with `h/2`.
pub fn convergence_gate(
    config: &RunConfig,
    ramp_time: f64,
    measurements: usize,
    base: &SwitchingRecord,
) -> Result<GateReport> {
    let refined_grid = config.grid.refined();
    let (half_dt, half_h) = rayon::join(
        || {
            run_point_with(
                config,
                ramp_time,
                measurements,
                0.5 * config.params.dt,
                &config.grid,
            )
        },
        || {
            run_point_with(
                config,
                ramp_time,
                measurements,
                config.params.dt,
                &refined_grid,
            )
        },
    );
    let half_dt = half_dt.map_err(|e| e.source)?;
    let half_h = half_h.map_err(|e| e.source)?;
    let base_peak = record_peak(base)?;
    let half_dt_peak = record_peak(&half_dt)?;
    let half_h_peak = record_peak(&half_h)?;
    Ok(GateReport {
        base_peak,
        half_dt_peak,
        half_h_peak,
        shift: (half_dt_peak - base_peak)
            .abs()
            .max((half_h_peak - base_peak).abs()),
        bin: 1.0 / measurements as f64,
        half_dt,
        half_h,
    })
}

#[derive(Debug, Clone)]
pub struct ProtocolPoint {
    pub ramp_time: f64,
    pub measurements: usize,
    pub record: std::result::Result<SwitchingRecord, ProtocolError>,
    pub gate: Option<Result<GateReport>>,
}

impl ProtocolPoint {
    pub fn id(&self) -> String {
        point_id(self.ramp_time, self.measurements)
    }

    /// Peak row, or `None` when the run failed.
    pub fn peak_row(&self, wkb_peak: Option<f64>) -> Option<PeakRow> {
        let record = self.record.as_ref().ok()?;
        let peak = peak_location(&record.gammas, &record.pdf)?;
        let gate = self.gate.as_ref().and_then(|g| g.as_ref().ok());
        Some(PeakRow {
            ramp_time: self.ramp_time,
            measurements: self.measurements,
            peak_gamma: peak.gamma,
            peak_height: peak.height,
            total_switch: record.total_switch(),
            unimodal: is_unimodal(&record.pdf),
            wkb_peak,
            gate_shift: gate.map(|g| g.shift),
            flagged: self.gate.is_some() && !gate.is_some_and(GateReport::passed),
        })
    }
}

pub fn point_id(ramp_time: f64, measurements: usize) -> String {
    format!("T{ramp_time}-N{measurements}")
}

fn protocol_point(
    config: &RunConfig,
    ramp_time: f64,
    measurements: usize,
    gate: bool,
) -> ProtocolPoint {
    let record = run_point(config, ramp_time, measurements);
    let gate = match (&record, gate) {
        (Ok(r), true) => Some(convergence_gate(config, ramp_time, measurements, r)),
        _ => None,
    };
    ProtocolPoint {
        ramp_time,
        measurements,
        record,
        gate,
    }
}

/// Runs every `(T, N)` pair in parallel, in row-major order of the lists.
pub fn protocol_sweep(
    config: &RunConfig,
    ramp_times: &[f64],
    measurement_counts: &[usize],
    gate: bool,
) -> Vec<ProtocolPoint> {
    let pairs: Vec<(f64, usize)> = ramp_times
        .iter()
        .flat_map(|&t| measurement_counts.iter().map(move |&n| (t, n)))
        .collect();
    pairs
        .par_iter()
        .map(|&(t, n)| protocol_point(config, t, n, gate))
        .collect()
}

/// Measurement-count sweep at fixed ramp time.
pub fn sweep_measurement_count(
    config: &RunConfig,
    ramp_time: f64,
    counts: &[usize],
    gate: bool,
) -> (Vec<ProtocolPoint>, PeakTable) {
    let points = protocol_sweep(config, &[ramp_time], counts, gate);
    let table = PeakTable {
        rows: points.iter().filter_map(|p| p.peak_row(None)).collect(),
    };
    (points, table)
}

/// Continuous semiclassical distribution shown next to a ramp-time sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct WkbOverlay {
    pub ramp_time: f64,
    pub distribution: crate::wkb::AdiabaticDistribution,
    pub peak: Option<Peak>,
}

pub fn wkb_overlay(config: &RunConfig, ramp_time: f64) -> Result<WkbOverlay> {
    let rate = RateFunction::wkb(config.params.v0)?;
    let distribution = adiabatic_pdf(ramp_time, &rate, &unit_grid(config.wkb.points))?;
    let peak = peak_location(&distribution.gammas, &distribution.pdf);
    Ok(WkbOverlay {
        ramp_time,
        distribution,
        peak,
    })
}

/// Ramp-time sweep at fixed measurement count with a semiclassical overlay
/// for each ramp time.
pub fn sweep_ramp_time(
    config: &RunConfig,
    measurements: usize,
    ramp_times: &[f64],
    gate: bool,
) -> (Vec<ProtocolPoint>, PeakTable, Vec<Result<WkbOverlay>>) {
    let points = protocol_sweep(config, ramp_times, &[measurements], gate);
    let overlays: Vec<Result<WkbOverlay>> =
        ramp_times.iter().map(|&t| wkb_overlay(config, t)).collect();
    let table = PeakTable {
        rows: points
            .iter()
            .zip(&overlays)
            .filter_map(|(p, o)| {
                let w = o.as_ref().ok().and_then(|o| o.peak).map(|p| p.gamma);
                p.peak_row(w)
            })
            .collect(),
    };
    (points, table, overlays)
}

// ---------------------------------------------------------------------------
// CDF comparison

/// Simulated CDF against the bare semiclassical recursion and against the
/// recursion with fitted rates and survival prefactors.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfComparison {
    pub ramp_time: f64,
    pub measurements: usize,
    pub gammas: Vec<f64>,
    pub simulated: Vec<f64>,
    /// Semiclassical rate, `F ≡ 1`.
    pub wkb: Vec<f64>,
    /// Fitted rate with fitted `F(γ)`.
    pub model: Vec<f64>,
    /// Fitted rate, `F ≡ 1`.
    pub rate_only: Vec<f64>,
    pub sup_wkb: f64,
    pub sup_model: f64,
    pub sup_rate_only: f64,
    pub record: SwitchingRecord,
    pub rates: Vec<RatePoint>,
    pub prefactors: Vec<PrefactorSample>,
    pub gate: Option<GateReport>,
    pub warnings: Vec<String>,
}

impl CdfComparison {
    /// Largest CDF change of the simulation under `dt/2` and `h/2`.
    pub fn band(&self) -> Option<f64> {
        self.gate.as_ref().map(|g| g.cdf_band(&self.record))
    }

    pub fn min_prefactor(&self) -> f64 {
        self.prefactors
            .iter()
            .map(|s| s.prefactor)
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes `n,gamma,simulated,wkb,model,rate_only` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = (0..self.gammas.len()).map(|k| {
            vec![
                (k + 1) as f64,
                self.gammas[k],
                self.simulated[k],
                self.wkb[k],
                self.model[k],
                self.rate_only[k],
            ]
        });
        write_rows(
            &mut out,
            &["n", "gamma", "simulated", "wkb", "model", "rate_only"],
            rows,
        )
    }
}

fn decay_setup(config: &RunConfig) -> Result<DecaySetup> {
    Ok(DecaySetup {
        v0: config.params.v0,
        grid: config.grid.build(&config.absorber)?,
        absorber: config.absorber,
        dt: config.params.dt,
        trace_stride: config.ratefit.trace_stride,
    })
}

/// Runs the measured ramp at `(T, N)`, fits rates over `ratefit.gammas`,
/// measures `F(γ)` over one interval `T/N`, and compares the three CDFs.
/// With `gate` the point is also rerun at `dt/2` and `h/2`.
pub fn compare_cdf(
    config: &RunConfig,
    ramp_time: f64,
    measurements: usize,
    gate: bool,
) -> Result<CdfComparison> {
    config.validate_ratefit()?;
    let setup = decay_setup(config)?;
    let interval = ramp_time / measurements as f64;
    let (point, fitted) = rayon::join(
        || protocol_point(config, ramp_time, measurements, gate),
        || -> Result<(Vec<RatePoint>, Vec<PrefactorSample>)> {
            let rates = rate_curve(&setup, &config.ratefit.gammas, config.ratefit.horizon);
            let numeric = numeric_rate(setup.v0, &rates)?;
            let prefactors = prefactor_curve(&setup, &config.ratefit.gammas, interval, &numeric)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok((rates, prefactors))
        },
    );
    let record = point.record.map_err(|e| e.source)?;
    let gate = point.gate.transpose()?;
    let (rates, prefactors) = fitted?;

    let v0 = config.params.v0;
    let numeric = numeric_rate(v0, &rates)?;
    let relaxation = rates
        .iter()
        .filter_map(|p| p.fit.as_ref().ok().map(|f| f.relaxation_time))
        .fold(None, |acc: Option<f64>, t| {
            Some(acc.map_or(t, |a| a.max(t)))
        });
    let curve = PrefactorCurve::from_samples(&prefactors)?;
    let wkb = measured_adiabatic_pdf(
        ramp_time,
        measurements,
        &RateFunction::wkb(v0)?,
        |_| 1.0,
        None,
    )?;
    let model = measured_adiabatic_pdf(
        ramp_time,
        measurements,
        &numeric,
        |g| curve.eval(g),
        relaxation,
    )?;
    let rate_only = measured_adiabatic_pdf(ramp_time, measurements, &numeric, |_| 1.0, relaxation)?;

    let simulated = record.cdf();
    let mut warnings: Vec<String> = prefactors
        .iter()
        .filter_map(|s| s.warning.clone())
        .collect();
    warnings.extend(model.warnings.iter().cloned());
    let (wkb, model, rate_only) = (wkb.cdf(), model.cdf(), rate_only.cdf());
    for p in &rates {
        match &p.fit {
            Ok(f) if !f.quality_ok() => warnings.push(format!(
                "rate fit at gamma {} has residual {}",
                p.gamma, f.residual
            )),
            Err(e) => warnings.push(format!("rate fit at gamma {} failed: {e}", p.gamma)),
            _ => {}
        }
    }
    Ok(CdfComparison {
        ramp_time,
        measurements,
        gammas: record.gammas.clone(),
        sup_wkb: sup_distance(&simulated, &wkb),
        sup_model: sup_distance(&simulated, &model),
        sup_rate_only: sup_distance(&simulated, &rate_only),
        simulated,
        wkb,
        model,
        rate_only,
        record,
        rates,
        prefactors,
        gate,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Commands and manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GroundState,
    Evolve,
    Switchdist,
    Wkb,
    Ratefit,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::Evolve => "evolve",
            Command::Switchdist => "switchdist",
            Command::Wkb => "wkb",
            Command::Ratefit => "ratefit",
            Command::Sweep => "sweep",
        }
    }

    /// Checks everything this command reads from the configuration.
    pub fn validate(self, config: &RunConfig) -> Result<()> {
        config.validate_common()?;
        match self {
            Command::GroundState => Ok(()),
            Command::Evolve => {
                let e = &config.evolve;
                if let Some(g) = e.gamma {
                    if !(0.0..1.0).contains(&g) {
                        return Err(invalid("evolve.gamma", "must lie in [0, 1)"));
                    }
                } else {
                    config.params.validate()?;
                }
                if e.initial == InitialState::Well && e.gamma.is_none() {
                    return Err(invalid(
                        "evolve.gamma",
                        "required for the well initial state",
                    ));
                }
                if let Some(d) = e.duration {
                    if !(d > 0.0) || !d.is_finite() {
                        return Err(invalid("evolve.duration", "must be positive"));
                    }
                }
                if e.trace_stride == 0 {
                    return Err(invalid("evolve.trace_stride", "must be at least 1"));
                }
                Ok(())
            }
            Command::Switchdist => config.params.validate(),
            Command::Wkb => {
                config.params.validate()?;
                if config.wkb.points < 2 {
                    return Err(invalid("wkb.points", "must be at least 2"));
                }
                Ok(())
            }
            Command::Ratefit => config.validate_ratefit(),
            Command::Sweep => {
                config.validate_sweep()?;
                if config.sweep.kind == SweepKind::TSweep && config.wkb.points < 2 {
                    return Err(invalid("wkb.points", "must be at least 2"));
                }
                Ok(())
            }
        }
    }
}

/// Everything needed to regenerate a set of output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub code_version: String,
    pub command: Command,
    pub config: RunConfig,
    /// Grid resolved from the configuration.
    pub grid: Grid,
    /// Output files, relative to the output root.
    pub outputs: Vec<String>,
    /// Headline numbers; non-finite values are omitted.
    pub summary: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    /// Every file written, manifests included.
    pub files: Vec<PathBuf>,
    pub summary: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    /// Sweep or rate points that failed while the rest completed.
    pub failures: Vec<String>,
}

struct Output<'a> {
    root: &'a Path,
    report: RunReport,
}

impl<'a> Output<'a> {
    fn new(root: &'a Path) -> Self {
        Self {
            root,
            report: RunReport::default(),
        }
    }

    /// Writes `rel` below the root and returns `rel` for a manifest.
    fn file(
        &mut self,
        rel: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<String> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(&path)?);
        write(&mut out)?;
        out.flush()?;
        self.report.files.push(path);
        Ok(rel.to_string())
    }

    fn manifest(
        &mut self,
        dir: &str,
        command: Command,
        config: &RunConfig,
        outputs: Vec<String>,
        summary: &BTreeMap<String, f64>,
        warnings: &[String],
    ) -> Result<()> {
        let manifest = Manifest {
            code_version: CODE_VERSION.into(),
            command,
            config: config.clone(),
            grid: config.grid.build(&config.absorber)?,
            outputs,
            summary: summary
                .iter()
                .filter(|(_, v)| v.is_finite())
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            warnings: warnings.to_vec(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Numerical(format!("manifest serialization: {e}")))?;
        let rel = join_rel(dir, "manifest.json");
        self.file(&rel, |out| Ok(writeln!(out, "{text}")?))?;
        Ok(())
    }
}

fn join_rel(dir: &str, name: &str) -> String {
    if dir.is_empty() {
        name.to_string()
    } else {
        format!("{dir}/{name}")
    }
}

/// Runs `command` and writes its files and manifest below `root`.
pub fn execute(command: Command, config: &RunConfig, root: &Path) -> Result<RunReport> {
    command.validate(config)?;
    let mut out = Output::new(root);
    match command {
        Command::GroundState => ground_state_command(config, &mut out)?,
        Command::Evolve => evolve_command(config, &mut out)?,
        Command::Switchdist => switchdist_command(config, &mut out)?,
        Command::Wkb => wkb_command(config, &mut out)?,
        Command::Ratefit => ratefit_command(config, &mut out)?,
        Command::Sweep => sweep_command(config, &mut out)?,
    }
    Ok(out.report)
}

/// Re-runs the command recorded in a manifest into `root`.
pub fn replay(manifest: &Path, root: &Path) -> Result<RunReport> {
    let m = Manifest::read(manifest)?;
    let mut report = execute(m.command, &m.config, root)?;
    if m.code_version != CODE_VERSION {
        report.warnings.push(format!(
            "manifest written by version {}, replayed with {CODE_VERSION}",
            m.code_version
        ));
    }
    Ok(report)
}

fn ground_state_command(config: &RunConfig, out: &mut Output) -> Result<()> {
    let gs = periodic_ground_state(config.params.v0, config.ground_state.periodic_points)?;
    let file = out.file("ground_state.csv", |w| {
        write_rows(
            w,
            &["phi", "psi"],
            (0..gs.len()).map(|j| vec![gs.phi(j), gs.values[j]]),
        )
    })?;
    let summary = BTreeMap::from([
        ("energy".to_string(), gs.energy),
        ("residual".to_string(), gs.residual()),
    ]);
    out.manifest("", Command::GroundState, config, vec![file], &summary, &[])?;
    out.report.summary = summary;
    Ok(())
}

fn evolve_command(config: &RunConfig, out: &mut Output) -> Result<()> {
    let p = &config.params;
    let e = &config.evolve;
    let grid = config.grid.build(&config.absorber)?;
    let mut psi = match (e.initial, e.gamma) {
        (InitialState::Well, Some(g)) => well_ground_state(p.v0, g, grid)?,
        _ => initial_state(p.v0, grid)?,
    };
    let bias = match e.gamma {
        Some(g) => Bias::Fixed(g),
        None => Bias::Ramp(BiasRamp::new(p.ramp_time)?),
    };
    let duration = e.duration.unwrap_or(p.ramp_time);
    let mut prop = Propagator::new(grid, p.v0, p.dt, &config.absorber)?;
    let trace = prop.evolve(&mut psi, 0.0, duration, &bias, e.trace_stride)?;
    let files = vec![
        out.file("trace.csv", |w| trace.write_csv(w))?,
        out.file("state.csv", |w| psi.write_csv(w))?,
    ];
    let summary = BTreeMap::from([
        ("duration".to_string(), duration),
        ("final_norm".to_string(), psi.norm_squared()),
    ]);
    out.manifest("", Command::Evolve, config, files, &summary, &[])?;
    out.report.summary = summary;
    Ok(())
}

fn record_summary(record: &SwitchingRecord) -> BTreeMap<String, f64> {
    let mut s = BTreeMap::from([
        ("total_switch".to_string(), record.total_switch()),
        ("completed".to_string(), record.len() as f64),
    ]);
    if let Some(peak) = peak_location(&record.gammas, &record.pdf) {
        s.insert("peak_gamma".into(), peak.gamma);
        s.insert("peak_height".into(), peak.height);
    }
    s
}

fn switchdist_command(config: &RunConfig, out: &mut Output) -> Result<()> {
    let p = &config.params;
    let (record, error) = match run_point(config, p.ramp_time, p.measurements) {
        Ok(r) => (r, None),
        Err(e) => (e.partial, Some(e.source)),
    };
    let file = out.file("record.csv", |w| record.write_csv(w))?;
    let summary = record_summary(&record);
    let warnings: Vec<String> = error
        .iter()
        .map(|e| format!("run stopped early: {e}"))
        .collect();
    out.manifest(
        "",
        Command::Switchdist,
        config,
        vec![file],
        &summary,
        &warnings,
    )?;
    out.report.summary = summary;
    match error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn wkb_command(config: &RunConfig, out: &mut Output) -> Result<()> {
    let p = &config.params;
    let rate = RateFunction::wkb(p.v0)?;
    let dist = adiabatic_pdf(p.ramp_time, &rate, &unit_grid(config.wkb.points))?;
    let measured = measured_adiabatic_pdf(p.ramp_time, p.measurements, &rate, |_| 1.0, None)?;
    let files = vec![
        out.file("wkb.csv", |w| dist.write_csv(w))?,
        out.file("wkb_measured.csv", |w| measured.write_csv(w))?,
    ];
    let mut summary = BTreeMap::from([("normalization".to_string(), dist.normalization)]);
    if let Some(peak) = peak_location(&dist.gammas, &dist.pdf) {
        summary.insert("peak_gamma".into(), peak.gamma);
    }
    if let Some(peak) = peak_location(&measured.gammas, &measured.pdf) {
        summary.insert("measured_peak_gamma".into(), peak.gamma);
    }
    out.manifest(
        "",
        Command::Wkb,
        config,
        files,
        &summary,
        &measured.warnings,
    )?;
    out.report.summary = summary;
    out.report.warnings = measured.warnings;
    Ok(())
}

fn rate_summary(points: &[RatePoint], failures: &mut Vec<String>) -> BTreeMap<String, f64> {
    let mut s = BTreeMap::new();
    for p in points {
        match &p.fit {
            Ok(f) => {
                s.insert(format!("rate@{}", p.gamma), f.rate);
                s.insert(format!("relaxation_time@{}", p.gamma), f.relaxation_time);
            }
            Err(e) => failures.push(format!("gamma {}: {e}", p.gamma)),
        }
    }
    s
}

fn fit_warnings(points: &[RatePoint]) -> Vec<String> {
    points
        .iter()
        .filter_map(|p| match &p.fit {
            Ok(f) if !f.quality_ok() => Some(format!(
                "rate fit at gamma {} has residual {} in ln P",
                p.gamma, f.residual
            )),
            _ => None,
        })
        .collect()
}

fn ratefit_command(config: &RunConfig, out: &mut Output) -> Result<()> {
    let setup = decay_setup(config)?;
    let points = rate_curve(&setup, &config.ratefit.gammas, config.ratefit.horizon);
    let mut warnings = fit_warnings(&points);
    let mut failures = Vec::new();
    let prefactors = match config.ratefit.interval {
        Some(interval) => {
            let numeric = numeric_rate(setup.v0, &points)?;
            let mut ok = Vec::new();
            for (g, s) in config.ratefit.gammas.iter().zip(prefactor_curve(
                &setup,
                &config.ratefit.gammas,
                interval,
                &numeric,
            )) {
                match s {
                    Ok(s) => {
                        warnings.extend(s.warning.clone());
                        ok.push(s);
                    }
                    Err(e) => failures.push(format!("prefactor at gamma {g}: {e}")),
                }
            }
            Some(ok)
        }
        None => None,
    };
    let file = out.file("rates.csv", |w| {
        write_rate_csv(w, &points, prefactors.as_deref())
    })?;
    let mut summary = rate_summary(&points, &mut failures);
    for s in prefactors.iter().flatten() {
        summary.insert(format!("prefactor@{}", s.gamma), s.prefactor);
    }
    out.manifest(
        "",
        Command::Ratefit,
        config,
        vec![file],
        &summary,
        &warnings,
    )?;
    out.report.summary = summary;
    out.report.warnings = warnings;
    out.report.failures = failures;
    Ok(())
}

fn narrowed(config: &RunConfig, ramp_time: f64, measurements: usize) -> RunConfig {
    let mut c = config.clone();
    c.sweep.ramp_times = vec![ramp_time];
    c.sweep.measurement_counts = vec![measurements];
    c
}

/// Files and notes accumulated over one sweep.
#[derive(Default)]
struct SweepLog {
    outputs: Vec<String>,
    summary: BTreeMap<String, f64>,
    warnings: Vec<String>,
    failures: Vec<String>,
}

fn sweep_command(config: &RunConfig, out: &mut Output) -> Result<()> {
    let dir = format!("runs/{}", config.sweep.id);
    let mut log = SweepLog::default();
    match config.sweep.kind {
        SweepKind::NSweep | SweepKind::TSweep => protocol_sweep_files(config, &dir, out, &mut log)?,
        SweepKind::WkbCompare => compare_sweep_files(config, &dir, out, &mut log)?,
        SweepKind::RateCurve => rate_sweep_files(config, &dir, out, &mut log)?,
    }
    out.manifest(
        &dir,
        Command::Sweep,
        config,
        log.outputs,
        &log.summary,
        &log.warnings,
    )?;
    out.report.summary = log.summary;
    out.report.warnings = log.warnings;
    out.report.failures = log.failures;
    Ok(())
}

fn protocol_sweep_files(
    config: &RunConfig,
    dir: &str,
    out: &mut Output,
    log: &mut SweepLog,
) -> Result<()> {
    let SweepLog {
        outputs,
        summary,
        warnings,
        failures,
    } = log;
    let ramp_times = config.sweep.ramp_times(&config.params);
    let counts = config.sweep.measurement_counts(&config.params);
    let points = protocol_sweep(config, &ramp_times, &counts, config.sweep.gate);
    let overlays: Vec<(f64, Result<WkbOverlay>)> = if config.sweep.kind == SweepKind::TSweep {
        ramp_times
            .iter()
            .map(|&t| (t, wkb_overlay(config, t)))
            .collect()
    } else {
        vec![]
    };
    for (t, o) in &overlays {
        match o {
            Ok(o) => outputs.push(out.file(&format!("{dir}/wkb_T{t}.csv"), |w| {
                o.distribution.write_csv(w)
            })?),
            Err(e) => failures.push(format!("overlay T={t}: {e}")),
        }
    }
    let mut table = PeakTable::default();
    for point in &points {
        let id = point.id();
        let pdir = format!("{dir}/{id}");
        let (record, error) = match &point.record {
            Ok(r) => (r, None),
            Err(e) => (&e.partial, Some(&e.source)),
        };
        let mut files = vec![out.file(&join_rel(&pdir, "record.csv"), |w| record.write_csv(w))?];
        let mut psummary = record_summary(record);
        let mut pwarn = Vec::new();
        if let Some(e) = error {
            failures.push(format!("{id}: {e}"));
            pwarn.push(format!("run stopped early: {e}"));
        }
        match &point.gate {
            Some(Ok(g)) => {
                files.push(out.file(&join_rel(&pdir, "record_half_dt.csv"), |w| {
                    g.half_dt.write_csv(w)
                })?);
                files.push(out.file(&join_rel(&pdir, "record_half_h.csv"), |w| {
                    g.half_h.write_csv(w)
                })?);
                psummary.insert("gate_shift".into(), g.shift);
                psummary.insert("gate_cdf_band".into(), g.cdf_band(record));
                if !g.passed() {
                    pwarn.push(format!(
                        "peak moved by {} under refinement, bin is {}",
                        g.shift, g.bin
                    ));
                }
            }
            Some(Err(e)) => {
                failures.push(format!("{id} gate: {e}"));
                pwarn.push(format!("convergence gate failed: {e}"));
            }
            None => {}
        }
        let wkb_peak = overlays
            .iter()
            .find(|(t, _)| *t == point.ramp_time)
            .and_then(|(_, o)| o.as_ref().ok())
            .and_then(|o| o.peak)
            .map(|p| p.gamma);
        if let Some(row) = point.peak_row(wkb_peak) {
            if row.flagged {
                warnings.push(format!("{id}: flagged by the convergence gate"));
            }
            table.rows.push(row);
        }
        out.manifest(
            &pdir,
            Command::Sweep,
            &narrowed(config, point.ramp_time, point.measurements),
            files.clone(),
            &psummary,
            &pwarn,
        )?;
        outputs.extend(files);
    }
    outputs.push(out.file(&format!("{dir}/peaks.csv"), |w| table.write_csv(w))?);
    let pdf_rows = points
        .iter()
        .filter_map(|p| p.record.as_ref().ok().map(|r| (p, r)))
        .flat_map(|(p, r)| {
            (0..r.len()).map(move |k| {
                vec![
                    p.ramp_time,
                    p.measurements as f64,
                    (k + 1) as f64,
                    r.gammas[k],
                    r.pdf[k],
                ]
            })
        });
    outputs.push(out.file(&format!("{dir}/pdfs.csv"), |w| {
        write_rows(
            w,
            &["ramp_time", "measurements", "n", "gamma", "pdf"],
            pdf_rows,
        )
    })?);
    for row in &table.rows {
        let id = point_id(row.ramp_time, row.measurements);
        summary.insert(format!("peak_gamma@{id}"), row.peak_gamma);
        summary.insert(format!("total_switch@{id}"), row.total_switch);
    }
    Ok(())
}

fn compare_sweep_files(
    config: &RunConfig,
    dir: &str,
    out: &mut Output,
    log: &mut SweepLog,
) -> Result<()> {
    let SweepLog {
        outputs,
        summary,
        warnings,
        failures,
    } = log;
    let ramp_times = config.sweep.ramp_times(&config.params);
    let counts = config.sweep.measurement_counts(&config.params);
    let pairs: Vec<(f64, usize)> = ramp_times
        .iter()
        .flat_map(|&t| counts.iter().map(move |&n| (t, n)))
        .collect();
    let results: Vec<Result<CdfComparison>> = pairs
        .iter()
        .map(|&(t, n)| compare_cdf(config, t, n, config.sweep.gate))
        .collect();
    let mut rows = Vec::new();
    for (&(t, n), res) in pairs.iter().zip(&results) {
        let id = point_id(t, n);
        let c = match res {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("{id}: {e}"));
                continue;
            }
        };
        let pdir = format!("{dir}/{id}");
        let files = vec![
            out.file(&join_rel(&pdir, "record.csv"), |w| c.record.write_csv(w))?,
            out.file(&join_rel(&pdir, "compare.csv"), |w| c.write_csv(w))?,
            out.file(&join_rel(&pdir, "rates.csv"), |w| {
                write_rate_csv(w, &c.rates, Some(&c.prefactors))
            })?,
        ];
        let psummary = BTreeMap::from([
            ("sup_wkb".to_string(), c.sup_wkb),
            ("sup_model".to_string(), c.sup_model),
            ("sup_rate_only".to_string(), c.sup_rate_only),
            ("band".to_string(), c.band().unwrap_or(f64::NAN)),
            ("min_prefactor".to_string(), c.min_prefactor()),
        ]);
        out.manifest(
            &pdir,
            Command::Sweep,
            &narrowed(config, t, n),
            files.clone(),
            &psummary,
            &c.warnings,
        )?;
        outputs.extend(files);
        warnings.extend(c.warnings.iter().map(|w| format!("{id}: {w}")));
        for (k, v) in &psummary {
            summary.insert(format!("{k}@{id}"), *v);
        }
        rows.push(vec![
            t,
            n as f64,
            c.sup_wkb,
            c.sup_model,
            c.sup_rate_only,
            c.band().unwrap_or(f64::NAN),
            c.min_prefactor(),
        ]);
    }
    outputs.push(out.file(&format!("{dir}/comparisons.csv"), |w| {
        write_rows(
            w,
            &[
                "ramp_time",
                "measurements",
                "sup_wkb",
                "sup_model",
                "sup_rate_only",
                "band",
                "min_prefactor",
            ],
            rows,
        )
    })?);
    Ok(())
}

fn rate_sweep_files(
    config: &RunConfig,
    dir: &str,
    out: &mut Output,
    log: &mut SweepLog,
) -> Result<()> {
    let SweepLog {
        outputs,
        summary,
        warnings,
        failures,
    } = log;
    let setup = decay_setup(config)?;
    let gammas = &config.ratefit.gammas;
    let results: Vec<_> = gammas
        .par_iter()
        .map(|&g| {
            let (trace, point) = rate_point(&setup, g, config.ratefit.horizon);
            let prefactor = match (config.ratefit.interval, &point.fit) {
                (Some(interval), Ok(fit)) => Some(
                    RateFunction::constant(fit.rate)
                        .and_then(|r| prefactor_curve(&setup, &[g], interval, &r).remove(0)),
                ),
                _ => None,
            };
            (trace, point, prefactor)
        })
        .collect();
    let mut all_points = Vec::new();
    let mut all_prefactors = Vec::new();
    for (trace, point, prefactor) in results {
        let id = format!("g{}", point.gamma);
        let pdir = format!("{dir}/{id}");
        let mut files = Vec::new();
        if let Some(trace) = &trace {
            files.push(out.file(&join_rel(&pdir, "trace.csv"), |w| trace.write_csv(w))?);
        }
        let mut pfail = Vec::new();
        let mut psummary = rate_summary(std::slice::from_ref(&point), &mut pfail);
        let mut pwarn = fit_warnings(std::slice::from_ref(&point));
        let prefactor = match prefactor {
            Some(Ok(s)) => {
                pwarn.extend(s.warning.clone());
                psummary.insert(format!("prefactor@{}", s.gamma), s.prefactor);
                Some(s)
            }
            Some(Err(e)) => {
                pfail.push(format!("prefactor at gamma {}: {e}", point.gamma));
                None
            }
            None => None,
        };
        let single: Vec<PrefactorSample> = prefactor.iter().cloned().collect();
        files.push(out.file(&join_rel(&pdir, "rates.csv"), |w| {
            write_rate_csv(w, std::slice::from_ref(&point), Some(&single))
        })?);
        let mut pconfig = config.clone();
        pconfig.ratefit.gammas = vec![point.gamma];
        pwarn.extend(pfail.iter().cloned());
        out.manifest(
            &pdir,
            Command::Sweep,
            &pconfig,
            files.clone(),
            &psummary,
            &pwarn,
        )?;
        outputs.extend(files);
        failures.extend(pfail);
        warnings.extend(pwarn);
        summary.extend(psummary);
        all_points.push(point);
        all_prefactors.extend(prefactor);
    }
    outputs.push(out.file(&format!("{dir}/rates.csv"), |w| {
        write_rate_csv(w, &all_points, Some(&all_prefactors))
    })?);
    Ok(())
}
