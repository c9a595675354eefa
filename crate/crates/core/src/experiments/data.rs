use std::sync::Arc;

use log::{info, warn};
use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parabola::step_count;
use super::{ExperimentError, ParabolaRanges, ParabolaSpec};
use crate::koopman::TrainingSet;
use crate::sim::{GraspSpec, SimContext, Simulator};
use crate::Control;

/// Recorded rollout: `controls[k]` moves `states[k]` to `states[k + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("a trajectory has at least one state")
    }

    pub fn to_training_set(&self) -> Result<TrainingSet, ExperimentError> {
        Ok(TrainingSet::from_trajectory(&self.states, &self.controls)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_traj: usize,
    pub ranges: ParabolaRanges,
    /// Fraction of failed rollouts tolerated before generation aborts.
    pub max_skip_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_traj: 30, ranges: ParabolaRanges::default(), max_skip_fraction: 0.2 }
    }
}

/// Random stream for item `index` of a seeded batch, independent of scheduling.
pub(crate) fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// One corner-fold rollout per sampled parabola, run in parallel.
///
/// Failed rollouts are skipped; more than `max_skip_fraction` failures is an error.
pub fn generate_training_data(
    ctx: &Arc<SimContext>,
    cfg: &DataConfig,
    seed: u64,
) -> Result<(TrainingSet, Vec<Trajectory>), ExperimentError> {
    if cfg.n_traj == 0 {
        return Err(ExperimentError::InvalidConfig("n_traj must be at least 1".into()));
    }
    let dt = ctx.config.dt;
    let results: Vec<Option<Trajectory>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let spec = ParabolaSpec::sample(&mut item_rng(seed, i), &ctx.mesh, &cfg.ranges, dt);
            match parabola_rollout(ctx, &spec) {
                Ok(t) => Some(t),
                Err(e) => {
                    warn!("training trajectory {i} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    let trajectories: Vec<Trajectory> = results.into_iter().flatten().collect();
    let skipped = cfg.n_traj - trajectories.len();
    if skipped as f64 > cfg.max_skip_fraction * cfg.n_traj as f64 || trajectories.is_empty() {
        return Err(ExperimentError::TooManyFailures { failed: skipped, total: cfg.n_traj });
    }
    info!("generated {} training trajectories ({skipped} skipped)", trajectories.len());
    let sets = trajectories.iter().map(Trajectory::to_training_set).collect::<Result<Vec<_>, _>>()?;
    Ok((TrainingSet::concat(&sets)?, trajectories))
}

/// Corner grasp from the flat rest pose driven along `spec`.
pub fn parabola_rollout(ctx: &Arc<SimContext>, spec: &ParabolaSpec) -> Result<Trajectory, ExperimentError> {
    let controls = spec.controls(ctx.mesh.height)?;
    let mut sim = Simulator::corner_grasp(ctx.clone());
    let states = sim.rollout(&controls)?;
    Ok(Trajectory { dt: ctx.config.dt, states: states.into_iter().map(|s| s.phi).collect(), controls })
}

/// Slow two-handed folds used as unseen targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub n_targets: usize,
    /// Landing x of both corners, as a fraction of the cloth length.
    pub landing: [f64; 2],
    #[serde(rename = "apex_height_m")]
    pub apex_height: [f64; 2],
    #[serde(rename = "motion_duration_s")]
    pub motion_duration: f64,
    #[serde(rename = "settle_s")]
    pub settle: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { n_targets: 5, landing: [0.82, 0.92], apex_height: [0.12, 0.2], motion_duration: 3.0, settle: 1.0 }
    }
}

/// Quasi-static half folds: both corners of the `x = 0` edge are carried to the far edge.
///
/// Returns the settled final states. Seeds are drawn from a stream family
/// disjoint from the training data.
pub fn generate_targets(
    ctx: &Arc<SimContext>,
    cfg: &TargetConfig,
    seed: u64,
) -> Result<Vec<DVector<f64>>, ExperimentError> {
    use rand::Rng;
    (0..cfg.n_targets)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(seed ^ 0x7a9e_75f0_1d5c_3b21, i);
            let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let landing = draw(cfg.landing);
            let apex = draw(cfg.apex_height);
            bimanual_fold(ctx, landing, apex, cfg).map(|t| t.final_state().clone())
        })
        .collect()
}

/// Trajectory of one two-handed fold including the settling phase.
pub fn bimanual_fold(
    ctx: &Arc<SimContext>,
    landing: f64,
    apex: f64,
    cfg: &TargetConfig,
) -> Result<Trajectory, ExperimentError> {
    let mesh = &ctx.mesh;
    let dt = ctx.config.dt;
    let phi = ctx.rest_state().phi;
    let nodes = [mesh.node(0, 0), mesh.node(0, mesh.cols - 1)];
    let starts = nodes.map(|k| crate::cloth::node_position(&phi, k));
    let grasp = GraspSpec::bimanual(mesh, nodes, starts)?;
    let move_steps = step_count(cfg.motion_duration, dt)?;
    let total = move_steps + step_count(cfg.settle, dt)?;
    let path = |start: &Vector3<f64>| ParabolaSpec {
        start: *start,
        end: Vector3::new(landing * mesh.width, start.y, start.z),
        apex_height: apex,
        tilt_toward_center: 0.0,
        motion_duration: cfg.motion_duration,
        pause_at: 0.0,
        pause_duration: 0.0,
        dither: 0.0,
        dither_seed: 0,
        duration: cfg.motion_duration + cfg.settle,
        dt,
    };
    let a = path(&starts[0]).controls(mesh.height)?;
    let b = path(&starts[1]).controls(mesh.height)?;
    let controls: Vec<Control> = a.iter().zip(&b).map(|(p, q)| [p[0], p[1], p[2], q[0], q[1], q[2]]).collect();
    debug_assert_eq!(controls.len(), total);
    let mut sim = Simulator::new(ctx.clone(), ctx.rest_state(), grasp)?;
    let states = sim.rollout(&controls)?;
    Ok(Trajectory { dt, states: states.into_iter().map(|s| s.phi).collect(), controls })
}
