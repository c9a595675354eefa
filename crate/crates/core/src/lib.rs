//! Dynamic cloth folding with a physics-based simulator, a kernel Koopman
//! surrogate and a constrained linear MPC.
//!
//! The pipeline is split into:
//!
//! - [`cloth`]: mesh topology, physical parameters, mass/bending operators and
//!   the inextensibility and contact constraint blocks.
//! - [`qp`]: the convex QP solvers shared by the simulator and the controller.
//! - [`sim`]: the simulation-oriented model (implicit step + iterative QP
//!   projection with contact and friction).
//! - [`koopman`]: Nyström-compressed kernel Koopman regression (lift, predict,
//!   reconstruct).
//! - [`mpc`]: condensed finite-horizon OCP over the lifted dynamics and the
//!   receding-horizon loop against the simulator.
//! - [`experiments`]: data generation, targets, metrics, sweeps and file formats.

pub mod cloth;
pub mod experiments;
pub mod koopman;
pub mod mpc;
pub mod qp;
pub mod sim;

pub use cloth::{ClothMesh, ClothOperators, ClothParams};
pub use koopman::{KernelSpec, KoopmanModel, TrainingSet};
pub use mpc::{ControlConstraintSet, MpcResult, OcpConfig};
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use sim::{ClothState, GraspSpec, SimConfig, Simulator};

/// Control displacement of the two grasped points, `[dx0, dy0, dz0, dx1, dy1, dz1]`.
pub type Control = [f64; 6];
