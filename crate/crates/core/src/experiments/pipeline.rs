use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    fold_error, folding_ratio, generate_targets, generate_training_data, mesh_error, running_cost, ExperimentConfig,
    ExperimentError, FoldMetrics, Trajectory,
};
use crate::koopman::{FitOptions, KoopmanModel, TrainingSet};
use crate::mpc::{check_controls, mpc_loop, ConstraintCheck, MpcResult, OcpConfig};
use crate::sim::{SimContext, Simulator};

/// One closed-loop fold and its evaluation.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub result: MpcResult,
    pub trajectory: Trajectory,
    pub metrics: FoldMetrics,
    pub compliance: ConstraintCheck,
}

/// Per-target entry of the run summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub target: usize,
    pub metrics: FoldMetrics,
    pub completed: bool,
    pub fallback_steps: usize,
    pub max_constraint_violation_m: f64,
    pub failure: Option<String>,
}

impl FoldSummary {
    pub fn new(target: usize, outcome: &FoldOutcome) -> Self {
        Self {
            target,
            metrics: outcome.metrics,
            completed: outcome.result.completed(),
            fallback_steps: outcome.result.diagnostics.iter().filter(|d| d.fallback).count(),
            max_constraint_violation_m: outcome.compliance.max(),
            failure: outcome.result.failure.as_ref().map(|e| e.to_string()),
        }
    }

    /// Relative folding error as a percentage with two decimals, e.g. `6.02%`.
    pub fn fold_error_percent(&self) -> String {
        format!("{:.2}%", 100.0 * self.metrics.fold_error)
    }
}

/// Machine-readable record of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub seed: u64,
    pub landmarks: usize,
    pub horizon: usize,
    pub folds: Vec<FoldSummary>,
    pub passing: usize,
    pub passed: bool,
}

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// Configuration plus the simulator context shared by every stage.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub ctx: Arc<SimContext>,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let ctx = config.context()?;
        Ok(Self { config, ctx })
    }

    pub fn training_data(&self) -> Result<(TrainingSet, Vec<Trajectory>), ExperimentError> {
        generate_training_data(&self.ctx, &self.config.data, self.config.seed)
    }

    pub fn targets(&self) -> Result<Vec<DVector<f64>>, ExperimentError> {
        generate_targets(&self.ctx, &self.config.targets, self.config.seed)
    }

    /// Fit with the configured options, overriding the landmark count and selection seed.
    pub fn fit(&self, data: &TrainingSet, landmarks: usize, seed: u64) -> Result<KoopmanModel, ExperimentError> {
        let opts = FitOptions { landmarks, seed, ..self.config.model.clone() };
        Ok(KoopmanModel::fit_with(data, &opts)?)
    }

    /// Closed-loop fold from the flat cloth toward `target`.
    ///
    /// Floors are re-anchored at the initial grasp. A truncated loop is still
    /// evaluated on its last state; the failure is kept in the result.
    pub fn fold(&self, model: &KoopmanModel, target: &DVector<f64>, mpc: &OcpConfig) -> Result<FoldOutcome, ExperimentError> {
        let mut sim = Simulator::corner_grasp(self.ctx.clone());
        let cfg = OcpConfig { constraints: mpc.constraints.anchored(sim.grasp()), ..*mpc };
        let run = &self.config.run;
        let result = mpc_loop(&mut sim, model, target, &cfg, run.total_steps, run.settle_steps)?;
        let trajectory = Trajectory {
            dt: self.ctx.config.dt,
            states: result.state_trajectory.clone(),
            controls: result.executed_controls.clone(),
        };
        let final_state = trajectory.final_state();
        let ratio = folding_ratio(final_state, &self.ctx.mesh);
        let target_ratio = folding_ratio(target, &self.ctx.mesh);
        let metrics = FoldMetrics {
            mesh_error: mesh_error(final_state, target)?,
            running_cost: running_cost(
                &trajectory.states,
                &trajectory.controls,
                target,
                cfg.q_prime,
                cfg.r_weight,
                trajectory.len(),
            )?,
            fold_ratio: ratio,
            target_fold_ratio: target_ratio,
            fold_error: fold_error(ratio, target_ratio)?,
        };
        let compliance = check_controls(&result.executed_controls, &result.initial_history, &cfg.constraints);
        Ok(FoldOutcome { result, trajectory, metrics, compliance })
    }

    /// Summary of a batch of folds against the configured eval thresholds.
    pub fn summarize(&self, model: &KoopmanModel, horizon: usize, outcomes: &[FoldOutcome]) -> RunSummary {
        let folds: Vec<FoldSummary> = outcomes.iter().enumerate().map(|(i, o)| FoldSummary::new(i, o)).collect();
        let passing = folds.iter().filter(|f| f.metrics.fold_error <= self.config.eval.max_fold_error).count();
        RunSummary {
            format_version: SUMMARY_FORMAT_VERSION,
            seed: self.config.seed,
            landmarks: model.landmark_count(),
            horizon,
            passed: passing >= self.config.eval.min_passing,
            passing,
            folds,
        }
    }
}
