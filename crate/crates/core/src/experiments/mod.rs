//! Experiment orchestration: declarative configuration, fold execution,
//! metric computation, and report emission.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::{CalibrationMode, ConstraintsConfig, ExperimentConfig, TaskKind};
pub use report::MetricsReport;
pub use runner::{run_experiment, Stage};

use thiserror::Error;

/// Experiment failures, partitioned by exit-code class: configuration
/// errors (2), data errors (3), backend errors (4).
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("io: {0}")]
    Io(String),
}

impl ExperimentError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) => 3,
            ExperimentError::Backend(_) => 4,
            ExperimentError::Io(_) => 1,
        }
    }
}

impl From<crate::tasks::TaskError> for ExperimentError {
    fn from(e: crate::tasks::TaskError) -> Self {
        match e {
            crate::tasks::TaskError::Io { .. } => ExperimentError::Io(e.to_string()),
            other => ExperimentError::Data(other.to_string()),
        }
    }
}

impl From<crate::scoring::ScoringError> for ExperimentError {
    fn from(e: crate::scoring::ScoringError) -> Self {
        ExperimentError::Backend(e.to_string())
    }
}

impl From<crate::backend::BackendError> for ExperimentError {
    fn from(e: crate::backend::BackendError) -> Self {
        ExperimentError::Backend(e.to_string())
    }
}

impl From<crate::calibration::CalibrationError> for ExperimentError {
    fn from(e: crate::calibration::CalibrationError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

impl From<crate::model::ModelError> for ExperimentError {
    fn from(e: crate::model::ModelError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

impl From<crate::solver::SolverError> for ExperimentError {
    fn from(e: crate::solver::SolverError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}
