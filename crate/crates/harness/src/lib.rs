//! Experiment orchestration for the safe energy-management pipeline: run
//! configuration, multi-seed training and evaluation, metrics and reports.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::{AgentKind, RunConfig};
pub use experiment::{run_experiment, RunOutcome, SeedResult};
pub use metrics::{constraint_tolerance, runtime_stats, ConstraintTolerance, EvalPoint, RuntimeStats};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("output directory: {0}")]
    Output(String),

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Core(#[from] safe_ems_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
