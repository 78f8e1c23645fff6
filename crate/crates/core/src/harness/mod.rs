//! Experiment orchestration: configs, seeded training runs, sweeps and
//! seed aggregation.

mod config;
mod stats;
mod sweep;
mod train;

use thiserror::Error;

pub use config::{Algorithm, ExperimentConfig};
pub use stats::{bootstrap_ci, final_window_mean, iqm, percentile, FINAL_WINDOW};
pub use sweep::{
    aggregate_sweep, run_sweep, write_summary_csv, SeedOutcome, SweepAxis, SweepMetadata,
    SweepResult, SweepRow,
};
pub use train::{
    build_network, evaluate, metric_log_bytes, run_training, EvalPoint, EvalSummary, RunFailure,
    RunResult, CHECKPOINT_FILE, METRICS_FILE,
};

use crate::agents::AgentError;
use crate::diagnostics::DiagnosticsError;
use crate::envs::EnvError;
use crate::nn::NnError;
use crate::projection::ProjectionError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} needs at least {1} values")]
    TooFewValues(&'static str, usize),
    #[error("bad sweep axis: {0}")]
    Axis(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
