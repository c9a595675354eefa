//! Cloth model building blocks: mesh, parameters, operators and constraints.

mod constraints;
mod mesh;
mod operators;
mod params;

pub use constraints::{
    contacts, contacts_excluding, contacts_oriented, inextensibility, length_residuals, shear_limits, ContactConfig, ContactKind, ContactSet,
    LengthConstraints, LengthResiduals,
};
pub use mesh::{node_position, set_node_position, ClothMesh, Edge, Quad};
pub use operators::{bending_stiffness, laplacian, mass_matrix, ClothOperators};
pub use params::{a_priori_params, compute_v, APrioriParams, ClothParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClothError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid cloth parameters: {0}")]
    InvalidParams(String),
    #[error("velocity trajectory is empty")]
    EmptyTrajectory,
}
