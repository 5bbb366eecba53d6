//! Run configuration: the JSON schema behind the `aggmark` binary.
//!
//! A configuration names a model file, the payment schedule, the valuation
//! grid, the conditioning rows to value, and optionally a behaviour
//! (option) block and a simulation block for Monte Carlo verification.
//! Everything that influences results lives in this file, so outputs are a
//! pure function of (config, command-line overrides); the effective config
//! is hashed into every output for traceability.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cashflow::{PaymentFn, PaymentSpec};
use crate::func::RateFn;
use crate::grid::TimeGrid;
use crate::model::{parse_pair, AggregateModel};
use crate::phb::BehaviourSpec;
use crate::{Error, Result};

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model file path, resolved relative to the config file's directory.
    pub model: PathBuf,
    pub payments: PaymentsConfig,
    pub grid: GridConfig,
    /// Conditioning rows to value: macrostate and running spell duration.
    pub conditioning: Vec<ConditioningConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behaviour: Option<BehaviourConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Payment schedule: maps are keyed by macrostate (`"1"`) and ordered pair
/// (`"0,2"`); unmentioned states and pairs pay nothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentsConfig {
    pub horizon: f64,
    pub interest: RateFn,
    #[serde(default)]
    pub duration_independent: bool,
    #[serde(default)]
    pub sojourn: BTreeMap<String, PaymentFn>,
    #[serde(default)]
    pub transition: BTreeMap<String, PaymentFn>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
    pub substeps: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    pub state: usize,
    pub duration: f64,
}

/// Behaviour block: partition plus scaling functions keyed `"j,k"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviourConfig {
    pub pre_exercise: Vec<usize>,
    pub post_exercise: Vec<usize>,
    #[serde(default)]
    pub scaling: BTreeMap<String, RateFn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Alternative model file for the Monte Carlo side only; the analytic
    /// side keeps `model`. Lets a verification run pit the implementation
    /// against deliberately perturbed dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_model: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a config file; paths inside stay as written (resolve against
    /// the config directory via [`RunConfig::resolve`]).
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// A path from the config, resolved relative to the config file's
    /// directory when not absolute.
    pub fn resolve(config_path: &Path, inner: &Path) -> PathBuf {
        if inner.is_absolute() {
            inner.to_path_buf()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(inner)
        }
    }

    /// SHA-256 of the effective configuration (overrides applied), hex.
    /// The output directory is excluded: it changes where results land, not
    /// what they are.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&hashed).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Build the payment spec against a loaded model.
    pub fn payment_spec(&self, model: &AggregateModel) -> Result<PaymentSpec> {
        let count = model.macro_count();
        let mut sojourn = vec![PaymentFn::Zero; count];
        for (key, f) in &self.payments.sojourn {
            let j: usize = key.trim().parse().map_err(|_| {
                Error::Config(format!("sojourn payment key '{key}' is not a macrostate"))
            })?;
            if j >= count {
                return Err(Error::Config(format!(
                    "sojourn payment for macrostate {j}, model has {count}"
                )));
            }
            sojourn[j] = f.clone();
        }
        let mut transition = BTreeMap::new();
        for (key, f) in &self.payments.transition {
            let (j, k) = parse_pair(key)?;
            if j >= count || k >= count || j == k {
                return Err(Error::Config(format!(
                    "transition payment key '{key}' is out of range or diagonal"
                )));
            }
            transition.insert((j, k), f.clone());
        }
        let spec = PaymentSpec {
            sojourn,
            transition,
            horizon: self.payments.horizon,
            interest: self.payments.interest.clone(),
            duration_independent: self.payments.duration_independent,
        };
        spec.validate(model)?;
        Ok(spec)
    }

    /// Build the behaviour spec, if configured.
    pub fn behaviour_spec(&self) -> Result<Option<BehaviourSpec>> {
        let Some(b) = &self.behaviour else {
            return Ok(None);
        };
        let mut scaling = BTreeMap::new();
        for (key, f) in &b.scaling {
            scaling.insert(parse_pair(key)?, f.clone());
        }
        Ok(Some(BehaviourSpec {
            pre_exercise: b.pre_exercise.clone(),
            post_exercise: b.post_exercise.clone(),
            scaling,
        }))
    }

    /// Build the valuation grid.
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(
            self.grid.start,
            self.grid.end,
            self.grid.steps,
            self.grid.substeps,
        )
    }

    /// Structural checks that need no model: grid sanity, horizon match,
    /// conditioning durations, breakpoint/grid alignment.
    pub fn validate(&self, payments: &PaymentSpec) -> Result<()> {
        let g = &self.grid;
        if !(g.start.is_finite() && g.end.is_finite()) || g.end <= g.start {
            return Err(Error::Config(format!(
                "grid [{}, {}] is not an interval",
                g.start, g.end
            )));
        }
        if g.steps == 0 || g.substeps == 0 {
            return Err(Error::Config("grid steps and substeps must be positive".into()));
        }
        let h = (g.end - g.start) / g.steps as f64;
        let tol = 1e-9 * h.max(1.0);
        if (g.end - payments.horizon).abs() > tol {
            return Err(Error::Config(format!(
                "grid must end at the payment horizon: grid ends {} but horizon is {}",
                g.end, payments.horizon
            )));
        }
        if self.conditioning.is_empty() {
            return Err(Error::Config("no conditioning rows requested".into()));
        }
        for c in &self.conditioning {
            if c.duration < 0.0 || c.duration > g.start + 1e-12 {
                return Err(Error::Config(format!(
                    "conditioning duration {} exceeds the valuation time {}",
                    c.duration, g.start
                )));
            }
        }
        // payment jumps must sit on grid nodes so node-averaged rates keep
        // full quadrature order
        for b in payments.time_breakpoints() {
            if b <= g.start || b >= g.end {
                continue;
            }
            let steps_in = (b - g.start) / h;
            if (steps_in - steps_in.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "payment time breakpoint {b} does not sit on the grid \
                     (spacing {h}); adjust grid steps"
                )));
            }
        }
        let duration_cuts = payments.duration_breakpoints();
        for &c in &duration_cuts {
            if c <= 0.0 || c >= g.end - g.start {
                continue;
            }
            let steps_in = c / h;
            if (steps_in - steps_in.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "duration threshold {c} is not a multiple of the grid \
                     spacing {h}; adjust grid steps"
                )));
            }
        }
        if !duration_cuts.is_empty() {
            for cond in &self.conditioning {
                let steps_in = cond.duration / h;
                if (steps_in - steps_in.round()).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "with duration-dependent payments, conditioning duration {} \
                         must be a multiple of the grid spacing {h}",
                        cond.duration
                    )));
                }
            }
        }
        if let Some(sim) = &self.simulation {
            if sim.n_paths == 0 {
                return Err(Error::Config("simulation needs at least one path".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config_json() -> String {
        r#"{
            "model": "model.json",
            "payments": {
                "horizon": 10.0,
                "interest": {"kind": "constant", "value": 0.03},
                "sojourn": {"1": {"kind": "constant", "value": 1.0}},
                "transition": {"0,2": {"kind": "constant", "value": 2.0}}
            },
            "grid": {"start": 2.0, "end": 10.0, "steps": 96, "substeps": 4},
            "conditioning": [{"state": 0, "duration": 0.5}]
        }"#
        .to_string()
    }

    fn three_state_model() -> AggregateModel {
        let mut rates = BTreeMap::new();
        rates.insert((0, 1), RateFn::constant(0.2));
        rates.insert((0, 2), RateFn::constant(0.05));
        rates.insert((1, 2), RateFn::constant(0.1));
        AggregateModel::markov_chain(3, rates).unwrap()
    }

    #[test]
    fn config_round_trips_and_hashes_stably() {
        let config: RunConfig = serde_json::from_str(&minimal_config_json()).unwrap();
        assert_eq!(config.output_dir, PathBuf::from("out"));
        let h1 = config.hash();
        let h2 = config.hash();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut other = config.clone();
        other.grid.steps = 97;
        assert_ne!(h1, other.hash());
        let mut moved = config.clone();
        moved.output_dir = PathBuf::from("elsewhere");
        assert_eq!(h1, moved.hash());
    }

    #[test]
    fn payment_spec_is_assembled() {
        let config: RunConfig = serde_json::from_str(&minimal_config_json()).unwrap();
        let model = three_state_model();
        let payments = config.payment_spec(&model).unwrap();
        assert_eq!(payments.sojourn_rate(1, 5.0, 0.0), 1.0);
        assert_eq!(payments.sojourn_rate(0, 5.0, 0.0), 0.0);
        assert_eq!(payments.transition_amount(0, 2, 5.0, 0.0), 2.0);
        assert_eq!(payments.transition_amount(1, 2, 5.0, 0.0), 0.0);
        config.validate(&payments).unwrap();
    }

    #[test]
    fn misaligned_breakpoints_are_rejected() {
        let mut config: RunConfig = serde_json::from_str(&minimal_config_json()).unwrap();
        config.payments.sojourn.insert(
            "1".into(),
            PaymentFn::Product {
                factors: vec![
                    PaymentFn::DurationAbove { threshold: 0.25 },
                    PaymentFn::TimeBefore { threshold: 7.0 },
                ],
            },
        );
        let model = three_state_model();
        // spacing h = 8/96 = 1/12: 0.25 = 3h aligns, 7.0 = 60h aligns
        let payments = config.payment_spec(&model).unwrap();
        config.validate(&payments).unwrap();
        // but a 0.3 threshold does not
        config.payments.sojourn.insert(
            "1".into(),
            PaymentFn::DurationAbove { threshold: 0.3 },
        );
        let payments = config.payment_spec(&model).unwrap();
        assert!(matches!(config.validate(&payments), Err(Error::Config(_))));
    }

    #[test]
    fn horizon_grid_mismatch_is_rejected() {
        let mut config: RunConfig = serde_json::from_str(&minimal_config_json()).unwrap();
        config.grid.end = 9.0;
        let model = three_state_model();
        let payments = config.payment_spec(&model).unwrap();
        assert!(matches!(config.validate(&payments), Err(Error::Config(_))));
    }

    #[test]
    fn conditioning_beyond_valuation_time_is_rejected() {
        let mut config: RunConfig = serde_json::from_str(&minimal_config_json()).unwrap();
        config.conditioning = vec![ConditioningConfig {
            state: 0,
            duration: 3.0,
        }];
        let model = three_state_model();
        let payments = config.payment_spec(&model).unwrap();
        assert!(matches!(config.validate(&payments), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal_config_json().replace("\"conditioning\"", "\"typo\"");
        assert!(serde_json::from_str::<RunConfig>(&text).is_err());
    }
}
