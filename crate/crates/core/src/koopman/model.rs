use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kernel_matrix, median_lengthscale, KernelSpec, KoopmanError, TrainingSet};
use crate::Control;

/// Relative eigenvalue cutoff shared by every pseudo-inverse of the fit.
pub const EIGEN_CUTOFF: f64 = 1e-10;

/// Uniform subsample of `m` input states without replacement.
///
/// `m = n` returns the inputs in their original order.
pub fn select_landmarks(data: &TrainingSet, m: usize, seed: u64) -> Result<DMatrix<f64>, KoopmanError> {
    let n = data.len();
    if m == 0 || m > n {
        return Err(KoopmanError::TooManyLandmarks { m, n });
    }
    if m == n {
        return Ok(data.inputs.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(data.inputs.select_columns(&idx))
}

/// Hyperparameters for [`KoopmanModel::fit_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub landmarks: usize,
    pub gamma: f64,
    /// Reconstruction regularizer; `None` reuses `gamma`.
    pub lambda_rec: Option<f64>,
    /// Kernel lengthscale in metres; `None` picks the median pairwise distance.
    #[serde(rename = "lengthscale_m")]
    pub lengthscale: Option<f64>,
    pub median_pairs: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            landmarks: 158,
            gamma: 1e-6,
            lambda_rec: None,
            lengthscale: None,
            median_pairs: 500,
            jitter: 1e-8,
            seed: 0,
        }
    }
}

/// Linear lifted surrogate `z⁺ = A z + B Δu`, `φ ≈ 𝔠 z + φ̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    /// `3N × m` landmark states, stored centered.
    pub landmarks: DMatrix<f64>,
    pub kernel: KernelSpec,
    /// `(K_m†)^{1/2}`, symmetric PSD.
    pub lift_matrix: DMatrix<f64>,
    pub a_matrix: DMatrix<f64>,
    /// `m × 6`.
    pub b_matrix: DMatrix<f64>,
    /// `3N × m` reconstruction matrix acting on centered states.
    pub recon_matrix: DMatrix<f64>,
    /// Per-coordinate training mean removed before lifting.
    pub mean: DVector<f64>,
    pub gamma: f64,
    pub lambda_rec: f64,
    pub seed: u64,
    pub n_train: usize,
}

/// Eigen-decomposition of a symmetric PSD matrix with small eigenvalues zeroed.
struct PsdSpectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl PsdSpectrum {
    fn new(mut m: DMatrix<f64>) -> Result<Self, KoopmanError> {
        m = (&m + m.transpose()) * 0.5;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(KoopmanError::DegenerateKernel);
        }
        let eig = SymmetricEigen::new(m);
        let max = eig.eigenvalues.max();
        if !(max > 0.0) {
            return Err(KoopmanError::DegenerateKernel);
        }
        let cut = EIGEN_CUTOFF * max;
        let values = eig.eigenvalues.map(|v| if v > cut { v } else { 0.0 });
        Ok(Self { values, vectors: eig.eigenvectors })
    }

    fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.values.map(|v| if v > 0.0 { f(v) } else { 0.0 });
        let scaled = &self.vectors * DMatrix::from_diagonal(&d);
        let out = scaled * self.vectors.transpose();
        (&out + out.transpose()) * 0.5
    }

    fn pinv(&self) -> DMatrix<f64> {
        self.apply(|v| 1.0 / v)
    }

    fn sqrt(&self) -> DMatrix<f64> {
        self.apply(f64::sqrt)
    }

    fn pinv_sqrt(&self) -> DMatrix<f64> {
        self.apply(|v| 1.0 / v.sqrt())
    }
}

impl KoopmanModel {
    /// Landmarks are picked, the lengthscale defaulted, and the model fitted.
    pub fn fit_with(data: &TrainingSet, opts: &FitOptions) -> Result<Self, KoopmanError> {
        let landmarks = select_landmarks(data, opts.landmarks, opts.seed)?;
        let lengthscale = match opts.lengthscale {
            Some(l) => l,
            None => median_lengthscale(&data.inputs, opts.median_pairs, opts.seed)?,
        };
        let kernel = KernelSpec::gaussian(lengthscale, opts.jitter)?;
        let mut model = Self::fit(data, &landmarks, kernel, opts.gamma, opts.lambda_rec.unwrap_or(opts.gamma))?;
        model.seed = opts.seed;
        Ok(model)
    }

    /// Closed-form Nyström fit. `landmarks` are raw (uncentered) states.
    pub fn fit(
        data: &TrainingSet,
        landmarks: &DMatrix<f64>,
        kernel: KernelSpec,
        gamma: f64,
        lambda_rec: f64,
    ) -> Result<Self, KoopmanError> {
        kernel.validate()?;
        for (name, v) in [("gamma", gamma), ("lambda_rec", lambda_rec)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KoopmanError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let m = landmarks.ncols();
        let n = data.len();
        if m == 0 || landmarks.nrows() != data.state_dim() {
            return Err(KoopmanError::InvalidData("landmarks do not match the state dimension".into()));
        }
        let nf = n as f64;

        let mean = data.inputs.column_mean();
        let center = |x: &DMatrix<f64>| {
            let mut c = x.clone();
            for mut col in c.column_iter_mut() {
                col -= &mean;
            }
            c
        };
        let landmarks = center(landmarks);
        let inputs = center(&data.inputs);
        let outputs = center(&data.outputs);

        let mut k_m = kernel_matrix(&kernel, &landmarks, &landmarks);
        for i in 0..m {
            k_m[(i, i)] += kernel.jitter;
        }
        let spec_m = PsdSpectrum::new(k_m.clone())?;
        let lift_matrix = spec_m.pinv_sqrt();
        let k_m_sqrt = spec_m.sqrt();

        // Y = [K_nm, U], n × (m + 6), with U the raw controls as rows.
        let k_nm = kernel_matrix(&kernel, &inputs, &landmarks);
        let k_out = kernel_matrix(&kernel, &outputs, &landmarks);
        let mut y = DMatrix::zeros(n, m + 6);
        y.columns_mut(0, m).copy_from(&k_nm);
        y.columns_mut(m, 6).copy_from(&data.controls.transpose());

        let mut w = y.tr_mul(&y);
        {
            let mut block = w.view_mut((0, 0), (m, m));
            block += &k_m * (gamma * nf);
        }
        for i in m..m + 6 {
            w[(i, i)] += gamma * nf;
        }
        let w_pinv = PsdSpectrum::new(w)?.pinv();

        let mut right = DMatrix::zeros(m + 6, m + 6);
        right.view_mut((0, 0), (m, m)).copy_from(&k_m_sqrt);
        for i in m..m + 6 {
            right[(i, i)] = 1.0;
        }
        let a_full = &lift_matrix * k_out.tr_mul(&y) * w_pinv * right;
        let a_matrix = a_full.columns(0, m).into_owned();
        let b_matrix = a_full.columns(m, 6).into_owned();

        let mut g = k_out.tr_mul(&k_out);
        g += &k_m * (lambda_rec * nf);
        let g_pinv = PsdSpectrum::new(g)?.pinv();
        let recon_matrix = (&outputs * &k_out) * g_pinv * k_m_sqrt;

        let model = Self {
            landmarks,
            kernel,
            lift_matrix,
            a_matrix,
            b_matrix,
            recon_matrix,
            mean,
            gamma,
            lambda_rec,
            seed: 0,
            n_train: n,
        };
        if !model.is_finite() {
            return Err(KoopmanError::DegenerateKernel);
        }
        Ok(model)
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.landmarks.nrows()
    }

    fn is_finite(&self) -> bool {
        [&self.lift_matrix, &self.a_matrix, &self.b_matrix, &self.recon_matrix]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// `z = (K_m†)^{1/2} k_{m,φ}`.
    pub fn lift(&self, phi: &DVector<f64>) -> DVector<f64> {
        let centered = phi - &self.mean;
        let s = -1.0 / (2.0 * self.kernel.lengthscale * self.kernel.lengthscale);
        let k = DVector::from_iterator(
            self.landmark_count(),
            self.landmarks.column_iter().map(|l| (s * (l - &centered).norm_squared()).exp()),
        );
        &self.lift_matrix * k
    }

    pub fn predict(&self, z: &DVector<f64>, du: &Control) -> DVector<f64> {
        &self.a_matrix * z + &self.b_matrix * DVector::from_column_slice(du)
    }

    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.recon_matrix * z + &self.mean
    }

    /// Lift once, roll the linear model, reconstruct every step; `controls.len() + 1` states.
    pub fn multi_step_forecast(&self, phi0: &DVector<f64>, controls: &[Control]) -> Vec<DVector<f64>> {
        let mut z = self.lift(phi0);
        let mut out = Vec::with_capacity(controls.len() + 1);
        out.push(self.reconstruct(&z));
        for u in controls {
            z = self.predict(&z, u);
            out.push(self.reconstruct(&z));
        }
        out
    }
}
