//! Simulation-oriented cloth model: implicit unconstrained step followed by an
//! iterative QP projection onto the inextensibility, grasp and contact
//! constraints, with Coulomb friction against the table.

mod context;
mod grasp;
mod simulator;

pub use context::{
    friction_term, unconstrained_step, ConstraintReport, Projection, SimContext, StepCache,
};
pub use grasp::GraspSpec;
pub use simulator::{RolloutError, Simulator};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloth::{ClothError, ContactConfig, LengthConstraints};
use crate::qp::QpError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Cloth(#[from] ClothError),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid grasp: {0}")]
    InvalidGrasp(String),
    #[error("implicit step matrix is not positive definite")]
    SingularSystem,
    #[error("non-finite state at t = {time:.3} s")]
    NonFinite { time: f64 },
    #[error("projection failed at t = {time:.3} s, outer iteration {iteration}: {reason} (violation {violation:.3e})")]
    StepFailed { time: f64, iteration: usize, violation: f64, reason: String },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("control sequence is empty")]
    EmptyControls,
}

/// Numerical settings of the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "dt_s")]
    pub dt: f64,
    #[serde(rename = "table_z_m")]
    pub table_z: f64,
    /// Stop the projection once `max(|C|, max(0, -H))` drops below this.
    pub tol: f64,
    pub max_outer: usize,
    /// Feasibility tolerance handed to the inner QP solves.
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub contact: ContactConfig,
    pub length_constraints: LengthConstraints,
    /// Keep quad diagonals from stretching beyond rest length (in-plane shear).
    pub shear_limit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            table_z: 0.0,
            tol: 1e-6,
            max_outer: 10,
            qp_tol: 1e-10,
            qp_max_iter: 200,
            contact: ContactConfig::default(),
            length_constraints: LengthConstraints::default(),
            shear_limit: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !self.table_z.is_finite() {
            return bad("table height must be finite");
        }
        if !(self.tol > 0.0 && self.qp_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1");
        }
        let c = &self.contact;
        if !(c.thickness >= 0.0 && c.activation_margin > 0.0 && c.layer_radius_factor > 0.0) {
            return bad("contact parameters must be positive");
        }
        Ok(())
    }
}

/// Positions, velocities and time of the cloth.
#[derive(Clone, Debug, PartialEq)]
pub struct ClothState {
    /// Stacked positions `(x | y | z)` (m).
    pub phi: DVector<f64>,
    /// Stacked velocities (m/s).
    pub phi_dot: DVector<f64>,
    pub time: f64,
}

impl ClothState {
    pub fn at_rest(phi: DVector<f64>) -> Self {
        let n = phi.len();
        Self { phi, phi_dot: DVector::zeros(n), time: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.iter().chain(self.phi_dot.iter()).all(|v| v.is_finite())
    }

    /// Largest node speed (m/s).
    pub fn max_speed(&self) -> f64 {
        let n = self.phi_dot.len() / 3;
        (0..n)
            .map(|k| {
                let v = &self.phi_dot;
                (v[k] * v[k] + v[n + k] * v[n + k] + v[2 * n + k] * v[2 * n + k]).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests;
