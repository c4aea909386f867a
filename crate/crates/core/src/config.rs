//! Run configuration shared by every command.
//!
//! Every section and every key is optional; missing values take the
//! defaults below. Unknown keys are rejected.
//!
//! ```toml
//! [params]          # v0 = 4, ramp_time = 800, measurements = 50, dt = 0.01
//! [grid]            # phi_min = -π-2, interior_end = 12, max_spacing = 0.01
//! [absorber]        # width = 20, strength = 8, order = 3, left = false
//! [ground_state]    # periodic_points = 1024
//! [evolve]          # gamma (fixed bias; ramp when absent), duration, initial, trace_stride
//! [wkb]             # points = 1000
//! [ratefit]         # gammas, horizon = 2000, trace_stride = 50, interval
//! [sweep]           # id, kind, ramp_times, measurement_counts, gate
//! ```

use serde::{Deserialize, Serialize};

use crate::absorber::AbsorberProfile;
use crate::error::{invalid, Error, Result};
use crate::initial::MIN_PERIODIC_POINTS;
use crate::state::GridSettings;
use crate::units::NormalizedParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: NormalizedParams,
    pub grid: GridSettings,
    pub absorber: AbsorberProfile,
    pub ground_state: GroundStateSection,
    pub evolve: EvolveSection,
    pub wkb: WkbSection,
    pub ratefit: RatefitSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateSection {
    /// Points per period for the periodic eigenproblem.
    pub periodic_points: usize,
}

impl Default for GroundStateSection {
    fn default() -> Self {
        Self {
            periodic_points: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// Periodic ground state kept on one period.
    #[default]
    Periodic,
    /// Hard-walled well ground state at the evolution bias.
    Well,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    /// Fixed bias; when absent the bias ramps over `params.ramp_time`.
    pub gamma: Option<f64>,
    /// Evolution time; defaults to the ramp time.
    pub duration: Option<f64>,
    pub initial: InitialState,
    pub trace_stride: usize,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            gamma: None,
            duration: None,
            initial: InitialState::Periodic,
            trace_stride: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WkbSection {
    /// Intervals of the uniform γ grid for the continuous distribution.
    pub points: usize,
}

impl Default for WkbSection {
    fn default() -> Self {
        Self { points: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatefitSection {
    pub gammas: Vec<f64>,
    /// Longest fixed-bias evolution per point.
    pub horizon: f64,
    pub trace_stride: usize,
    /// Measurement interval `T/N` for the survival prefactor; skipped when
    /// absent.
    pub interval: Option<f64>,
}

impl Default for RatefitSection {
    fn default() -> Self {
        Self {
            gammas: vec![0.45, 0.5, 0.55, 0.6],
            horizon: 2000.0,
            trace_stride: 50,
            interval: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Measurement count varies at fixed ramp time.
    #[default]
    NSweep,
    /// Ramp time varies at fixed measurement count.
    TSweep,
    /// Simulated CDF against the semiclassical and prefactor models.
    WkbCompare,
    /// Fitted decay rates over `ratefit.gammas`.
    RateCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub id: String,
    pub kind: SweepKind,
    /// Ramp times; defaults to `[params.ramp_time]` when empty.
    pub ramp_times: Vec<f64>,
    /// Measurement counts; defaults to `[params.measurements]` when empty.
    pub measurement_counts: Vec<usize>,
    /// Rerun every point with `dt/2` and with `h/2` and flag peaks that
    /// move by a bin or more.
    pub gate: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            id: "sweep".into(),
            kind: SweepKind::NSweep,
            ramp_times: vec![],
            measurement_counts: vec![],
            gate: false,
        }
    }
}

impl SweepSection {
    pub fn ramp_times(&self, params: &NormalizedParams) -> Vec<f64> {
        if self.ramp_times.is_empty() {
            vec![params.ramp_time]
        } else {
            self.ramp_times.clone()
        }
    }

    pub fn measurement_counts(&self, params: &NormalizedParams) -> Vec<usize> {
        if self.measurement_counts.is_empty() {
            vec![params.measurements]
        } else {
            self.measurement_counts.clone()
        }
    }
}

impl RunConfig {
    /// Checks the parts every command relies on.
    pub fn validate_common(&self) -> Result<()> {
        let p = &self.params;
        if !(p.v0 > 0.0) || !p.v0.is_finite() {
            return Err(invalid("params.v0", "must be positive and finite"));
        }
        if !(p.dt > 0.0) || !p.dt.is_finite() {
            return Err(invalid("params.dt", "must be positive"));
        }
        self.absorber.validate()?;
        self.grid.build(&self.absorber)?;
        if self.ground_state.periodic_points < MIN_PERIODIC_POINTS {
            return Err(invalid(
                "ground_state.periodic_points",
                format!("need at least {MIN_PERIODIC_POINTS}"),
            ));
        }
        Ok(())
    }

    /// Ramp parameters for one `(T, N)` point.
    pub fn point_params(&self, ramp_time: f64, measurements: usize) -> Result<NormalizedParams> {
        NormalizedParams::new(self.params.v0, ramp_time, measurements, self.params.dt)
    }

    pub fn validate_ratefit(&self) -> Result<()> {
        let r = &self.ratefit;
        if r.gammas.is_empty() {
            return Err(invalid("ratefit.gammas", "must not be empty"));
        }
        if r.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(invalid("ratefit.gammas", "every bias must lie in (0, 1)"));
        }
        if !(r.horizon > 0.0) {
            return Err(invalid("ratefit.horizon", "must be positive"));
        }
        if r.trace_stride == 0 {
            return Err(invalid("ratefit.trace_stride", "must be at least 1"));
        }
        if let Some(i) = r.interval {
            if !(i > 0.0) {
                return Err(invalid("ratefit.interval", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<()> {
        let s = &self.sweep;
        if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id == "." || s.id == ".." {
            return Err(invalid("sweep.id", "must be a plain directory name"));
        }
        for t in s.ramp_times(&self.params) {
            for n in s.measurement_counts(&self.params) {
                self.point_params(t, n)?;
            }
        }
        if s.kind == SweepKind::RateCurve || s.kind == SweepKind::WkbCompare {
            self.validate_ratefit()?;
        }
        Ok(())
    }

    /// Parses a JSON document holding either a bare configuration or a run
    /// manifest with an embedded one.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let inner = match value.get("config") {
            Some(c) if value.get("code_version").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| Error::Config(e.to_string()))
    }
}
