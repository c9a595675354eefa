//! Condensed finite-horizon OCP over the lifted linear dynamics and the
//! receding-horizon loop against the simulator.
//!
//! Both grasped points always move by the same displacement, so the decision
//! variable is one 3-vector `v_t` per step with `Δu_t = [v_t; v_t]`.

mod constraints;
mod ocp;
mod receding;

pub use constraints::{check_controls, ConstraintCheck, ControlConstraintSet, ControlHistory};
pub use ocp::{build_ocp, expand_plan, solve_ocp, CondensedOcp, Ocp, OcpConfig, OcpSolution};
pub use receding::{mpc_loop, MpcResult, StepDiagnostics};

use thiserror::Error;

use crate::qp::QpError;
use crate::sim::SimError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("state has {got} entries, model expects {want}")]
    Dimension { got: usize, want: usize },
    #[error("OCP at step {step} is infeasible")]
    Infeasible { step: usize },
    #[error("OCP at step {step} did not converge in {iterations} working-set changes")]
    NotConverged { step: usize, iterations: usize },
    #[error("OCP at step {step}: {source}")]
    Qp { step: usize, source: QpError },
    #[error("simulator failed at step {step}: {source}")]
    Sim { step: usize, source: SimError },
}

#[cfg(test)]
mod tests;
