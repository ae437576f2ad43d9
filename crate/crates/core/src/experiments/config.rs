//! Declarative experiment configuration.
//!
//! A single JSON file describes the whole run; CLI flags override fields,
//! and the fully-resolved config is embedded in every report for
//! provenance. The endpoint can also be overridden through the
//! `CONFORM_ENDPOINT` environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::backend::{BackendDescriptor, BackendMode};
use crate::calibration::train::TrainConfig;
use crate::scoring::{ScoringParams, Strategy};
use crate::solver::SolveLimits;
use crate::tasks::morality::C2Mode;

pub const CONFIG_SCHEMA: u32 = 1;
pub const ENDPOINT_ENV: &str = "CONFORM_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Morality,
    Coref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    None,
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub name: String,
    pub mode: BackendMode,
    /// HTTP endpoint URL, or "mock" for the seeded deterministic mock.
    pub endpoint: String,
    pub model_id: String,
    /// Seed of the mock backend (ignored for HTTP endpoints).
    #[serde(default)]
    pub mock_seed: u64,
    /// In-flight request bound.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_concurrency() -> usize {
    8
}

impl BackendConfig {
    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: self.name.clone(),
            mode: self.mode,
            endpoint: self.endpoint.clone(),
            model_id: self.model_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintsConfig {
    /// Attach the task's hard constraints (the "+ constr" condition).
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Role-uniqueness scope for the morality task.
    #[serde(default)]
    pub c2_mode: C2Mode,
    /// Candidate-pair window for coreference; exhaustive when absent.
    #[serde(default)]
    pub max_pair_distance: Option<usize>,
    /// Render both tweet-context variants as separate prompting strategies.
    #[serde(default = "default_true")]
    pub context_variants: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ConstraintsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            c2_mode: C2Mode::default(),
            max_pair_distance: None,
            context_variants: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_nodes: u64,
    pub time_limit_secs: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_nodes: 1_000_000, time_limit_secs: 30.0 }
    }
}

impl SolverConfig {
    pub fn limits(&self) -> SolveLimits {
        SolveLimits {
            max_nodes: self.max_nodes,
            time_limit: std::time::Duration::from_secs_f64(self.time_limit_secs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub task: TaskKind,
    pub dataset: PathBuf,
    pub backend: BackendConfig,
    /// Elicitation strategy names (see [`Strategy::name`]).
    pub strategies: Vec<String>,
    /// Few-shot exemplar count; 0, 2, or 5.
    #[serde(default)]
    pub shots: u32,
    #[serde(default)]
    pub constraints: ConstraintsConfig,
    #[serde(default = "default_calibration")]
    pub calibration: CalibrationMode,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub scoring: ScoringParams,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA
}

fn default_calibration() -> CalibrationMode {
    CalibrationMode::None
}

fn default_folds() -> usize {
    5
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            ExperimentError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        config.apply_env();
        config.validate()?;
        Ok(config)
    }

    /// Environment overrides (endpoint only).
    pub fn apply_env(&mut self) {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.is_empty() {
                self.backend.endpoint = endpoint;
            }
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(ExperimentError::Config(format!(
                "unsupported config schema {} (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if self.strategies.is_empty() {
            return Err(ExperimentError::Config("strategies must be non-empty".into()));
        }
        if ![0, 2, 5].contains(&self.shots) {
            return Err(ExperimentError::Config(format!(
                "shots must be 0, 2, or 5, got {}",
                self.shots
            )));
        }
        if self.folds == 0 {
            return Err(ExperimentError::Config("folds must be >= 1".into()));
        }
        for name in &self.strategies {
            let strategy = Strategy::from_name(name).ok_or_else(|| {
                ExperimentError::Config(format!("unknown strategy {name:?}"))
            })?;
            if strategy.is_white_box() && self.backend.mode == BackendMode::BlackBox {
                return Err(ExperimentError::Config(format!(
                    "strategy {name} needs token logprobs but backend {} is black-box",
                    self.backend.name
                )));
            }
        }
        Ok(())
    }

    pub fn strategy_kinds(&self) -> Vec<Strategy> {
        self.strategies
            .iter()
            .map(|s| Strategy::from_name(s).expect("validated strategies"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            task: TaskKind::Coref,
            dataset: "data.jsonl".into(),
            backend: BackendConfig {
                name: "mock".into(),
                mode: BackendMode::WhiteBox,
                endpoint: "mock".into(),
                model_id: "seeded".into(),
                mock_seed: 0,
                concurrency: 8,
            },
            strategies: vec!["true_false".into()],
            shots: 0,
            constraints: ConstraintsConfig::default(),
            calibration: CalibrationMode::None,
            train: TrainConfig::default(),
            seed: 0,
            folds: 5,
            output_dir: "out".into(),
            cache_dir: "cache".into(),
            scoring: ScoringParams::default(),
            solver: SolverConfig::default(),
        }
    }

    #[test]
    fn minimal_config_is_valid() {
        minimal().validate().unwrap();
    }

    #[test]
    fn invalid_shots_are_rejected() {
        let mut c = minimal();
        c.shots = 3;
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn white_box_strategy_on_black_box_backend_is_rejected() {
        let mut c = minimal();
        c.backend.mode = BackendMode::BlackBox;
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
        c.strategies = vec!["generation_sampling".into()];
        c.validate().unwrap();
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let mut c = minimal();
        c.strategies = vec!["galaxy_brain".into()];
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = minimal();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
