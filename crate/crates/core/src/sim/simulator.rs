use std::sync::Arc;

use thiserror::Error;

use super::{ClothState, GraspSpec, SimContext, SimError, StepCache};
use crate::Control;

/// A failed rollout with the states produced before the failure.
#[derive(Debug, Error)]
#[error("rollout failed at control {index}: {source}")]
pub struct RolloutError {
    pub index: usize,
    pub partial: Vec<ClothState>,
    #[source]
    pub source: SimError,
}

/// Stateful simulator: shared context plus the current state, grasp and warm-start cache.
///
/// Single-owner; run independent rollouts on separate instances.
#[derive(Clone, Debug)]
pub struct Simulator {
    ctx: Arc<SimContext>,
    state: ClothState,
    grasp: GraspSpec,
    cache: StepCache,
    initial: (ClothState, GraspSpec),
}

impl Simulator {
    pub fn new(ctx: Arc<SimContext>, state: ClothState, grasp: GraspSpec) -> Result<Self, SimError> {
        let dim = ctx.mesh.state_dim();
        if state.phi.len() != dim || state.phi_dot.len() != dim {
            return Err(SimError::InvalidConfig(format!("state must have {dim} entries")));
        }
        if !state.is_finite() {
            return Err(SimError::NonFinite { time: state.time });
        }
        let cache = StepCache::new(&ctx);
        Ok(Self { initial: (state.clone(), grasp.clone()), ctx, state, grasp, cache })
    }

    /// Flat cloth on the table grasped at corner `(0, 0)` and its neighbor `(0, 1)`.
    pub fn corner_grasp(ctx: Arc<SimContext>) -> Self {
        let state = ctx.rest_state();
        let grasp = GraspSpec::corner(&ctx.mesh, &state.phi);
        Self::new(ctx, state, grasp).expect("rest state is valid")
    }

    pub fn context(&self) -> &Arc<SimContext> {
        &self.ctx
    }

    pub fn state(&self) -> &ClothState {
        &self.state
    }

    pub fn grasp(&self) -> &GraspSpec {
        &self.grasp
    }

    /// Replace the state and grasp; the warm-start cache is cleared.
    pub fn set_state(&mut self, state: ClothState, grasp: GraspSpec) {
        self.state = state;
        self.grasp = grasp;
        self.cache = StepCache::new(&self.ctx);
    }

    /// Return to the state and grasp given at construction.
    pub fn reset(&mut self) {
        let (s, g) = self.initial.clone();
        self.set_state(s, g);
    }

    pub fn step(&mut self, control: &Control) -> Result<&ClothState, SimError> {
        let mut grasp = self.grasp.clone();
        let next = self.ctx.step(&self.state, &mut grasp, control, &mut self.cache)?;
        self.state = next;
        self.grasp = grasp;
        Ok(&self.state)
    }

    /// Apply `controls` in order; the result starts with the current state.
    pub fn rollout(&mut self, controls: &[Control]) -> Result<Vec<ClothState>, RolloutError> {
        if controls.is_empty() {
            return Err(RolloutError { index: 0, partial: vec![self.state.clone()], source: SimError::EmptyControls });
        }
        let mut out = Vec::with_capacity(controls.len() + 1);
        out.push(self.state.clone());
        for (index, u) in controls.iter().enumerate() {
            match self.step(u) {
                Ok(s) => out.push(s.clone()),
                Err(source) => return Err(RolloutError { index, partial: out, source }),
            }
        }
        Ok(out)
    }

    /// `n_steps` with the grasp held still.
    pub fn settle(&mut self, n_steps: usize) -> Result<&ClothState, SimError> {
        for _ in 0..n_steps {
            self.step(&[0.0; 6])?;
        }
        Ok(&self.state)
    }
}
