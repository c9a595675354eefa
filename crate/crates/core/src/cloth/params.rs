use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ClothError;

/// Physical parameters of the inextensible cloth model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClothParams {
    /// Inertial density (kg/m²).
    #[serde(rename = "rho_kg_m2")]
    pub rho: f64,
    /// Virtual (gravitational) mass (kg/m²), `0 < delta <= rho`.
    #[serde(rename = "delta_kg_m2")]
    pub delta: f64,
    /// Bending constant.
    pub kappa: f64,
    /// Rayleigh damping (1/s).
    #[serde(rename = "alpha_damp_per_s")]
    pub alpha_damp: f64,
    /// Coulomb friction coefficient against the table.
    pub mu: f64,
    /// Gravitational acceleration (m/s²).
    #[serde(rename = "gravity_m_s2")]
    pub gravity: f64,
}

impl Default for ClothParams {
    /// Wool (0.1804 kg/m²) with the a-priori virtual mass and damping for `S = 2`, `V = 1 m²/s²`.
    fn default() -> Self {
        let rho = 0.1804;
        let est = a_priori_params(rho, 2.0, 1.0);
        Self { rho, delta: est.delta, kappa: 0.05, alpha_damp: est.alpha, mu: 0.3, gravity: 9.8 }
    }
}

impl ClothParams {
    pub fn validate(&self) -> Result<(), ClothError> {
        let bad = |msg: String| Err(ClothError::InvalidParams(msg));
        if !(self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.delta > 0.0 && self.delta <= self.rho) {
            return bad(format!("delta must lie in (0, rho], got {} (rho = {})", self.delta, self.rho));
        }
        if !(self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.alpha_damp > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha_damp));
        }
        if !(self.mu >= 0.0) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if !self.gravity.is_finite() {
            return bad("gravity must be finite".into());
        }
        Ok(())
    }
}

/// Virtual mass and damping from the linear a-priori formulas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct APrioriParams {
    pub delta_raw: f64,
    pub alpha_raw: f64,
    pub delta: f64,
    pub alpha: f64,
    pub clamped: bool,
}

const MIN_DELTA_FRACTION: f64 = 1e-3;
const MIN_ALPHA: f64 = 1e-3;

/// `rho` in kg/m², `s` normalized area, `v` in m²/s² (see [`compute_v`]).
///
/// The raw affine estimates are returned alongside values clamped to
/// `delta in (0, rho]` and `alpha > 0`.
pub fn a_priori_params(rho: f64, s: f64, v: f64) -> APrioriParams {
    let delta_raw = -0.0223 - 0.0178 * s + 0.0714 * v + 0.7664 * rho;
    let alpha_raw = 0.2082 - 0.1481 * s + 1.1804 * v + 1.7440 * rho;
    let delta = delta_raw.clamp(MIN_DELTA_FRACTION * rho, rho);
    let alpha = alpha_raw.max(MIN_ALPHA);
    let clamped = delta != delta_raw || alpha != alpha_raw;
    if clamped {
        warn!(
            "a-priori parameters clamped: delta {delta_raw:.4} -> {delta:.4}, alpha {alpha_raw:.4} -> {alpha:.4}"
        );
    }
    APrioriParams { delta_raw, alpha_raw, delta, alpha, clamped }
}

/// Mean of the top half of squared node speeds pooled over all nodes and samples.
pub fn compute_v(velocities: &[DVector<f64>]) -> Result<f64, ClothError> {
    let mut pool = Vec::new();
    for v in velocities {
        let n = v.len() / 3;
        pool.extend((0..n).map(|k| v[k].powi(2) + v[n + k].powi(2) + v[2 * n + k].powi(2)));
    }
    if pool.is_empty() {
        return Err(ClothError::EmptyTrajectory);
    }
    pool.sort_by(|a, b| b.total_cmp(a));
    let top = pool.len().div_ceil(2);
    Ok(pool[..top].iter().sum::<f64>() / top as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wool_and_denim_estimates() {
        let wool = a_priori_params(0.1804, 2.0, 1.0);
        assert!((wool.delta_raw - 0.1518).abs() < 5e-5);
        assert!((wool.alpha_raw - 1.4070).abs() < 5e-5);
        let denim = a_priori_params(0.3046, 2.0, 1.0);
        assert!((denim.delta_raw - 0.2469).abs() < 5e-5);
        let alpha_oracle = 0.2082 - 0.1481 * 2.0 + 1.1804 + 1.7440 * 0.3046;
        assert!((denim.alpha_raw - alpha_oracle).abs() < 1e-12);
        assert!((denim.alpha_raw - 1.6236).abs() < 5e-5);
        assert!(!wool.clamped && !denim.clamped);
    }

    #[test]
    fn intercepts() {
        let p = a_priori_params(0.0, 0.0, 0.0);
        assert_eq!(p.delta_raw, -0.0223);
        assert_eq!(p.alpha_raw, 0.2082);
        assert!(p.clamped);
    }

    #[test]
    fn affine_in_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (rho, s, v, d) = (rng.gen_range(0.05..0.5), rng.gen_range(0.0..3.0), rng.gen_range(0.0..4.0), rng.gen_range(-0.1..0.1));
            let a = a_priori_params(rho, s, v);
            let b = a_priori_params(rho + d, s, v);
            assert!((b.delta_raw - a.delta_raw - 0.7664 * d).abs() < 1e-12);
            assert!((b.alpha_raw - a.alpha_raw - 1.7440 * d).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_to_rho() {
        // fast motion drives delta above rho
        let p = a_priori_params(0.1, 2.0, 10.0);
        assert!(p.delta_raw > 0.1);
        assert_eq!(p.delta, 0.1);
        assert!(p.clamped);
    }

    #[test]
    fn default_params_are_valid() {
        let p = ClothParams::default();
        p.validate().unwrap();
        assert!((p.delta - 0.1518).abs() < 1e-4);
    }

    #[test]
    fn rejects_delta_above_rho() {
        let p = ClothParams { delta: 0.5, ..ClothParams::default() };
        assert!(p.validate().is_err());
    }

    fn uniform(n: usize, speed: f64) -> DVector<f64> {
        // speed split across x and z
        let mut v = DVector::zeros(3 * n);
        for k in 0..n {
            v[k] = speed * 0.6;
            v[2 * n + k] = speed * 0.8;
        }
        v
    }

    #[test]
    fn v_uniform_speed() {
        let traj = vec![uniform(5, 1.5), uniform(5, 1.5)];
        assert!((compute_v(&traj).unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn v_half_fast() {
        let traj = vec![uniform(4, 2.0), uniform(4, 0.0)];
        assert!((compute_v(&traj).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn v_empty_is_error() {
        assert_eq!(compute_v(&[]), Err(ClothError::EmptyTrajectory));
    }

    #[test]
    fn v_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traj: Vec<DVector<f64>> =
            (0..7).map(|_| DVector::from_fn(3 * 9, |_, _| rng.gen_range(-2.0..2.0))).collect();
        // oracle: collect per-node speeds node-major, sort ascending, average the upper half
        let mut speeds = Vec::new();
        for v in &traj {
            for k in 0..9 {
                let s = (v[k] * v[k] + v[9 + k] * v[9 + k] + v[18 + k] * v[18 + k]).sqrt();
                speeds.push(s * s);
            }
        }
        speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let half = (speeds.len() + 1) / 2;
        let oracle: f64 = speeds[speeds.len() - half..].iter().sum::<f64>() / half as f64;
        assert!((compute_v(&traj).unwrap() - oracle).abs() < 1e-12);
    }
}
