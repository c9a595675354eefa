//! Experiment harness: training data, targets, metrics, sweeps and file formats.

mod config;
mod data;
mod io;
mod metrics;
mod parabola;
mod pipeline;
mod sweep;

pub use config::{EvalConfig, ExperimentConfig, MeshConfig, RunConfig, CONFIG_FORMAT_VERSION};
pub use data::{bimanual_fold, generate_targets, generate_training_data, parabola_rollout, DataConfig, TargetConfig, Trajectory};
pub use io::{
    read_json, read_trajectory, read_trajectory_from, read_training_set, read_training_set_from, write_json,
    write_trajectory, write_trajectory_to, write_training_set, write_training_set_to, DATASET_FORMAT_VERSION,
    TRAJECTORY_FORMAT_VERSION,
};
pub use metrics::{
    cost_terms, fold_error, folding_ratio, folding_ratio_with, mesh_error, normalized_cost_curve, optimal_rotation, running_cost,
    FoldMetrics,
};
pub use parabola::{ParabolaRanges, ParabolaSpec};
pub use pipeline::{FoldOutcome, FoldSummary, Pipeline, RunSummary, SUMMARY_FORMAT_VERSION};
pub use sweep::{
    median, quantile, read_summary_csv, read_sweep_csv, summarize, sweep, write_summary_csv, write_sweep_csv,
    SweepParameter, SweepRow, SweepSummary,
};

use thiserror::Error;

use crate::koopman::KoopmanError;
use crate::mpc::MpcError;
use crate::sim::{RolloutError, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {total} rollouts failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rollout(#[from] Box<RolloutError>),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<RolloutError> for ExperimentError {
    fn from(e: RolloutError) -> Self {
        Self::Rollout(Box::new(e))
    }
}
