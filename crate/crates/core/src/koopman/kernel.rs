use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KoopmanError;

/// Gaussian kernel `k(x, y) = exp(-‖x − y‖² / (2 ℓ²))` with a Tikhonov jitter on `K_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub lengthscale: f64,
    pub jitter: f64,
}

impl KernelSpec {
    pub fn gaussian(lengthscale: f64, jitter: f64) -> Result<Self, KoopmanError> {
        let spec = Self { lengthscale, jitter };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), KoopmanError> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(KoopmanError::InvalidParameter(format!("lengthscale {}", self.lengthscale)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(KoopmanError::InvalidParameter(format!("jitter {}", self.jitter)));
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let d2 = (x - y).norm_squared();
        (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// `K_ij = k(a_i, b_j)` for the columns of `a` and `b`.
pub fn kernel_matrix(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let na: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    let mut k = a.tr_mul(b);
    let s = -1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let d2 = (na[i] + nb[j] - 2.0 * k[(i, j)]).max(0.0);
            k[(i, j)] = (s * d2).exp();
        }
    }
    k
}

/// Median Euclidean distance over `pairs` random pairs of distinct columns.
pub fn median_lengthscale(states: &DMatrix<f64>, pairs: usize, seed: u64) -> Result<f64, KoopmanError> {
    let n = states.ncols();
    if n < 2 {
        return Err(KoopmanError::InvalidData("need at least two states for the median heuristic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d: Vec<f64> = (0..pairs.max(1))
        .map(|_| {
            let idx = sample(&mut rng, n, 2);
            (states.column(idx.index(0)) - states.column(idx.index(1))).norm()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(KoopmanError::InvalidData("training states are (nearly) identical".into()))
    }
}
