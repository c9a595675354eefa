use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::sim::GraspSpec;
use crate::Control;

/// The four control-constraint families of the OCP.
///
/// Floors keep both grasped points at `y ≥ y_min` (they may not retreat away
/// from the cloth center, which lies at larger `y`) and `z ≥ h_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConstraintSet {
    #[serde(rename = "y_min_m")]
    pub y_min: f64,
    #[serde(rename = "h_min_m")]
    pub h_min: f64,
    /// Bound on the step-to-step change of each displacement component (m).
    #[serde(rename = "s_m")]
    pub s: f64,
    /// Per-step displacement lower bound (m).
    #[serde(rename = "w_m")]
    pub w: [f64; 6],
    /// Per-step displacement upper bound (m).
    #[serde(rename = "v_m")]
    pub v: [f64; 6],
}

impl Default for ControlConstraintSet {
    fn default() -> Self {
        Self { y_min: 0.0, h_min: 0.0, s: 0.002, w: [-0.015; 6], v: [0.015; 6] }
    }
}

impl ControlConstraintSet {
    /// Floors taken from the initial grasp: the first point's `y` and the lower of the two heights.
    pub fn from_grasp(grasp: &GraspSpec, s: f64, w: [f64; 6], v: [f64; 6]) -> Self {
        let [a, b] = &grasp.positions;
        Self { y_min: a.y, h_min: a.z.min(b.z), s, w, v }
    }

    /// Same bounds with floors re-anchored at `grasp`.
    pub fn anchored(&self, grasp: &GraspSpec) -> Self {
        Self::from_grasp(grasp, self.s, self.w, self.v)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(MpcError::InvalidConfig(format!("smoothness bound must be positive, got {}", self.s)));
        }
        if !self.y_min.is_finite() || !self.h_min.is_finite() {
            return Err(MpcError::InvalidConfig("floors must be finite".into()));
        }
        for i in 0..6 {
            if !(self.w[i] < 0.0 && 0.0 < self.v[i]) || !self.w[i].is_finite() || !self.v[i].is_finite() {
                return Err(MpcError::InvalidConfig(format!(
                    "displacement box needs w < 0 < v, component {i}: [{}, {}]",
                    self.w[i], self.v[i]
                )));
            }
        }
        Ok(())
    }

    /// Box on the reduced 3-vector: intersection of both points' bounds.
    pub(crate) fn reduced_box(&self) -> ([f64; 3], [f64; 3]) {
        let lo = [0, 1, 2].map(|a| self.w[a].max(self.w[a + 3]));
        let hi = [0, 1, 2].map(|a| self.v[a].min(self.v[a + 3]));
        (lo, hi)
    }
}

/// Last two absolute grasp positions `u_{κ−1}`, `u_{κ−2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlHistory {
    pub prev: Control,
    pub prev2: Control,
}

impl ControlHistory {
    /// Zero prior velocity at the current grasp.
    pub fn at_rest(grasp: &GraspSpec) -> Self {
        let u = grasp.flat_positions();
        Self { prev: u, prev2: u }
    }

    pub fn last_displacement(&self) -> Control {
        std::array::from_fn(|i| self.prev[i] - self.prev2[i])
    }

    pub fn push(&mut self, du: &Control) {
        self.prev2 = self.prev;
        for i in 0..6 {
            self.prev[i] += du[i];
        }
    }
}

/// Largest violation of each constraint family over a control sequence (m).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstraintCheck {
    pub floor: f64,
    pub smoothness: f64,
    pub equal_displacement: f64,
    pub bounds: f64,
}

impl ConstraintCheck {
    pub fn max(&self) -> f64 {
        self.floor.max(self.smoothness).max(self.equal_displacement).max(self.bounds)
    }
}

/// Post-hoc check of a displacement sequence applied from `history`.
pub fn check_controls(controls: &[Control], history: &ControlHistory, set: &ControlConstraintSet) -> ConstraintCheck {
    let mut out = ConstraintCheck::default();
    let mut u = history.prev;
    let mut last = history.last_displacement();
    for du in controls {
        for i in 0..6 {
            u[i] += du[i];
            out.smoothness = out.smoothness.max((du[i] - last[i]).abs() - set.s);
            out.bounds = out.bounds.max(set.w[i] - du[i]).max(du[i] - set.v[i]);
        }
        for p in [0, 3] {
            out.floor = out.floor.max(set.y_min - u[p + 1]).max(set.h_min - u[p + 2]);
        }
        for a in 0..3 {
            out.equal_displacement = out.equal_displacement.max((du[a] - du[a + 3]).abs());
        }
        last = *du;
    }
    out.floor = out.floor.max(0.0);
    out.smoothness = out.smoothness.max(0.0);
    out.bounds = out.bounds.max(0.0);
    out
}
