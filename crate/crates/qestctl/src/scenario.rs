//! Scenario files: strict JSON describing a model, a pulse (inline or to be
//! optimized) and what to compute.

use std::path::Path;

use qest_core::mlestim::{DEFAULT_GRID_POINTS, DEFAULT_PRIOR_HALF_WIDTH};
use qest_core::pulseopt::{OptimizerConfig, SelectivitySpec, DEFAULT_TIME_WEIGHT};
use qest_core::qmodel::state_from_bloch;
use qest_core::{BlochVector, ModelParams, ParamName, PiecewisePulse, QubitState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    #[default]
    Up,
    Down,
    Mixed,
    Bloch([f64; 3]),
}

impl StateSpec {
    pub fn state(&self) -> Result<QubitState, CliError> {
        Ok(match self {
            StateSpec::Up => QubitState::up(),
            StateSpec::Down => QubitState::down(),
            StateSpec::Mixed => QubitState::maximally_mixed(),
            StateSpec::Bloch([x, y, z]) => state_from_bloch(&BlochVector::new(*x, *y, *z)?)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bures,
    Qfi,
    Cfi,
    Bound,
    FdQfi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Qfi,
    Selectivity,
    Cfi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectivityBlock {
    pub param: ParamName,
    pub ensemble: Vec<f64>,
    pub targets: Vec<StateSpec>,
    #[serde(default)]
    pub initial: StateSpec,
}

impl SelectivityBlock {
    pub fn spec(&self) -> Result<SelectivitySpec, CliError> {
        let targets = self.targets.iter().map(|t| t.state()).collect::<Result<Vec<_>, _>>()?;
        Ok(SelectivitySpec::new(self.param, self.ensemble.clone(), targets, self.initial.state()?)?)
    }
}

/// Optimizer request used in place of an inline pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub cost: CostKind,
    #[serde(default)]
    pub config: OptimizerConfig,
    #[serde(default)]
    pub free_final_time: bool,
    /// Estimated parameter for the qfi and cfi costs.
    #[serde(default)]
    pub param: Option<ParamName>,
    #[serde(default)]
    pub time_weight: Option<f64>,
    #[serde(default)]
    pub selectivity: Option<SelectivityBlock>,
    /// Model used during optimization when it differs from the simulated one.
    #[serde(default)]
    pub model: Option<ModelParams>,
}

impl OptimizeRequest {
    pub fn time_weight(&self) -> f64 {
        self.time_weight.unwrap_or(DEFAULT_TIME_WEIGHT)
    }
}

fn default_param() -> ParamName {
    ParamName::Delta
}

fn default_samples() -> usize {
    32
}

fn default_fd_step() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    /// Parameter the information metrics refer to.
    #[serde(default = "default_param")]
    pub param: ParamName,
    /// Values of `param` for the tracked systems; Bures distances compare the
    /// first two. Defaults to the model value alone.
    #[serde(default)]
    pub tracked: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples_per_segment: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self { param: default_param(), tracked: None, samples_per_segment: default_samples(), fd_step: default_fd_step() }
    }
}

fn default_resamples() -> usize {
    1000
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationBlock {
    pub delta_true: f64,
    pub shots: u64,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `seed + 1`.
    #[serde(default)]
    pub bootstrap_seed: Option<u64>,
    /// Defaults to Δ₀ ± 0.4ω₀ around the model offset.
    #[serde(default)]
    pub prior: Option<[f64; 2]>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl EstimationBlock {
    pub fn prior(&self, model: &ModelParams) -> (f64, f64) {
        match self.prior {
            Some([lo, hi]) => (lo, hi),
            None => {
                let h = DEFAULT_PRIOR_HALF_WIDTH * model.omega0;
                (model.delta - h, model.delta + h)
            }
        }
    }

    pub fn bootstrap_seed(&self) -> u64 {
        self.bootstrap_seed.unwrap_or(self.seed.wrapping_add(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetRange {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub offsets: OffsetRange,
    pub final_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelParams,
    #[serde(default)]
    pub initial: StateSpec,
    #[serde(default)]
    pub pulse: Option<PiecewisePulse>,
    #[serde(default)]
    pub optimize: Option<OptimizeRequest>,
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub estimation: Option<EstimationBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl Scenario {
    /// Parses and validates; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario =
            serde_path_to_error::deserialize(de).map_err(|e| schema(format!("{}: {}", e.path(), e.inner())))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.pulse.is_some() && self.optimize.is_some() {
            return Err(schema("pulse, optimize: give either an inline pulse or an optimizer request, not both"));
        }
        if let Some(req) = &self.optimize {
            req.config.validate().map_err(|e| schema(format!("optimize.config: {e}")))?;
            match req.cost {
                CostKind::Selectivity if req.selectivity.is_none() => {
                    return Err(schema("optimize.selectivity: required by the selectivity cost"));
                }
                CostKind::Qfi | CostKind::Cfi if req.param.is_none() => {
                    return Err(schema("optimize.param: required by the qfi and cfi costs"));
                }
                _ => {}
            }
            if !req.free_final_time && req.config.final_time.is_none() {
                return Err(schema("optimize.config.final_time: required unless free_final_time is set"));
            }
            if let Some(sel) = &req.selectivity {
                sel.spec().map_err(|e| schema(format!("optimize.selectivity: {e}")))?;
            }
        }
        self.initial.state().map_err(|e| schema(format!("initial: {e}")))?;
        let sim = &self.simulation;
        if sim.samples_per_segment == 0 {
            return Err(schema("simulation.samples_per_segment: must be >= 1"));
        }
        if !(sim.fd_step.is_finite() && sim.fd_step > 0.0) {
            return Err(schema("simulation.fd_step: must be finite and > 0"));
        }
        if self.metrics.contains(&Metric::Bures) && self.tracked().len() < 2 {
            return Err(schema("simulation.tracked: the bures metric needs two tracked values"));
        }
        if let Some(est) = &self.estimation {
            if est.shots == 0 {
                return Err(schema("estimation.shots: must be >= 1"));
            }
            if est.resamples < 100 {
                return Err(schema("estimation.resamples: must be >= 100"));
            }
            let (lo, hi) = est.prior(&self.model);
            if !(lo < hi) || est.grid_points < 2 {
                return Err(schema("estimation.prior: needs lo < hi and at least two grid points"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.offsets.points == 0 || !(sw.offsets.from <= sw.offsets.to) {
                return Err(schema("sweep.offsets: needs from <= to and at least one point"));
            }
            if sw.offsets.points > 1 && sw.offsets.from == sw.offsets.to {
                return Err(schema("sweep.offsets: several points need from < to"));
            }
            if !(sw.final_time.is_finite() && sw.final_time >= 0.0) {
                return Err(schema("sweep.final_time: must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn tracked(&self) -> Vec<f64> {
        self.simulation.tracked.clone().unwrap_or_else(|| vec![self.model.get(self.simulation.param)])
    }

    /// Applies a command-line seed to every random consumer.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            if let Some(req) = &mut self.optimize {
                req.config.seed = s;
            }
            if let Some(est) = &mut self.estimation {
                est.seed = s;
                est.bootstrap_seed = None;
            }
        }
        self
    }
}

/// SHA-256 of the scenario re-serialized with sorted keys, so that field
/// order and whitespace do not change it.
pub fn scenario_hash(text: &str) -> Result<String, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| schema(format!("invalid JSON: {e}")))?;
    let canonical = serde_json::to_string(&value).map_err(|e| schema(e.to_string()))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "model": {"delta": 0.2, "alpha": 1.0, "gamma": 0.0},
        "pulse": {"segments": [{"duration": 1.0, "amplitude": 1.0, "phase": 0.0}]}
    }"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.initial, StateSpec::Up);
        assert!(s.metrics.is_empty());
        assert_eq!(s.tracked(), vec![0.2]);
        assert_eq!(s.simulation.samples_per_segment, 32);
    }

    #[test]
    fn unknown_fields_are_rejected_with_their_path() {
        let text = MINIMAL.replace("\"phase\": 0.0", "\"phase\": 0.0, \"phse\": 1");
        match Scenario::from_json(&text) {
            Err(CliError::Schema(m)) => assert!(m.contains("pulse.segments[0]"), "{m}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 1, \"extra\": true");
        assert!(matches!(Scenario::from_json(&text), Err(CliError::Schema(_))));
    }

    #[test]
    fn semantic_checks() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(Scenario::from_json(&text), Err(CliError::Schema(_))));
        let text = MINIMAL.replace("\"gamma\": 0.0", "\"gamma\": -1.0");
        assert!(matches!(Scenario::from_json(&text), Err(CliError::Schema(_))));
        let text = MINIMAL.replace("\"model\"", "\"metrics\": [\"bures\"], \"model\"");
        match Scenario::from_json(&text) {
            Err(CliError::Schema(m)) => assert!(m.contains("tracked"), "{m}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace(
            "\"pulse\"",
            "\"optimize\": {\"cost\": \"qfi\", \"config\": {\"final_time\": 2.0}}, \"pulse\"",
        );
        assert!(matches!(Scenario::from_json(&text), Err(CliError::Schema(_))));
    }

    #[test]
    fn hash_ignores_field_order() {
        let a = r#"{"a": 1, "b": {"c": 2, "d": [1, 2]}}"#;
        let b = r#"{ "b": {"d": [1, 2], "c": 2}, "a": 1 }"#;
        assert_eq!(scenario_hash(a).unwrap(), scenario_hash(b).unwrap());
        assert_ne!(scenario_hash(a).unwrap(), scenario_hash(r#"{"a": 2}"#).unwrap());
    }

    #[test]
    fn seed_override_reaches_every_block() {
        let text = MINIMAL.replace(
            "\"pulse\"",
            "\"estimation\": {\"delta_true\": 0.25, \"shots\": 10, \"seed\": 3, \"bootstrap_seed\": 9}, \"pulse\"",
        );
        let s = Scenario::from_json(&text).unwrap().with_seed(Some(40));
        let est = s.estimation.unwrap();
        assert_eq!(est.seed, 40);
        assert_eq!(est.bootstrap_seed(), 41);
    }
}
