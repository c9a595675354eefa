//! Kernel Koopman surrogate with Nyström compression.
//!
//! States are lifted to `z = (K_m†)^{1/2} k_{m,φ}` over `m` landmark states,
//! propagated by the linear map `z⁺ = A z + B Δu` and mapped back by the
//! reconstruction matrix `𝔠`.

mod data;
mod io;
mod kernel;
mod model;

pub use data::TrainingSet;
pub use io::{decode_model, encode_model, read_model, write_model, MODEL_FORMAT_VERSION};
pub use kernel::{kernel_matrix, median_lengthscale, KernelSpec};
pub use model::{select_landmarks, FitOptions, KoopmanModel, EIGEN_CUTOFF};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("cannot pick {m} landmarks from {n} training states")]
    TooManyLandmarks { m: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel matrix is numerically zero")]
    DegenerateKernel,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
