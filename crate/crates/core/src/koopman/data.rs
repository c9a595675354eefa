use nalgebra::{DMatrix, DVector};

use super::KoopmanError;
use crate::Control;

/// Triples `(φ_i, Δu_i, φ_i⁺)` stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    /// `3N × n` input states.
    pub inputs: DMatrix<f64>,
    /// `6 × n` control displacements.
    pub controls: DMatrix<f64>,
    /// `3N × n` successor states.
    pub outputs: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(inputs: DMatrix<f64>, controls: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self, KoopmanError> {
        let n = inputs.ncols();
        if n == 0 {
            return Err(KoopmanError::InvalidData("training set is empty".into()));
        }
        if controls.ncols() != n || outputs.ncols() != n {
            return Err(KoopmanError::InvalidData(format!(
                "column counts differ: {n} inputs, {} controls, {} outputs",
                controls.ncols(),
                outputs.ncols()
            )));
        }
        if controls.nrows() != 6 || outputs.nrows() != inputs.nrows() {
            return Err(KoopmanError::InvalidData("controls must have 6 rows and states matching dims".into()));
        }
        if inputs.iter().chain(controls.iter()).chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(KoopmanError::InvalidData("non-finite entry".into()));
        }
        Ok(Self { inputs, controls, outputs })
    }

    /// Consecutive triples of one trajectory: `states` has one more entry than `controls`.
    pub fn from_trajectory(states: &[DVector<f64>], controls: &[Control]) -> Result<Self, KoopmanError> {
        if states.len() != controls.len() + 1 {
            return Err(KoopmanError::InvalidData(format!(
                "{} states for {} controls",
                states.len(),
                controls.len()
            )));
        }
        let k = controls.len();
        let inputs = DMatrix::from_columns(&states[..k]);
        let outputs = DMatrix::from_columns(&states[1..]);
        let controls = DMatrix::from_fn(6, k, |i, j| controls[j][i]);
        Self::new(inputs, controls, outputs)
    }

    /// Concatenate sets in order.
    pub fn concat(sets: &[TrainingSet]) -> Result<Self, KoopmanError> {
        let first = sets.first().ok_or_else(|| KoopmanError::InvalidData("nothing to concatenate".into()))?;
        let d = first.state_dim();
        let n: usize = sets.iter().map(|s| s.len()).sum();
        let mut inputs = DMatrix::zeros(d, n);
        let mut controls = DMatrix::zeros(6, n);
        let mut outputs = DMatrix::zeros(d, n);
        let mut at = 0;
        for s in sets {
            if s.state_dim() != d {
                return Err(KoopmanError::InvalidData("state dimensions differ".into()));
            }
            let k = s.len();
            inputs.columns_mut(at, k).copy_from(&s.inputs);
            controls.columns_mut(at, k).copy_from(&s.controls);
            outputs.columns_mut(at, k).copy_from(&s.outputs);
            at += k;
        }
        Self::new(inputs, controls, outputs)
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn control(&self, i: usize) -> Control {
        let c = self.controls.column(i);
        [c[0], c[1], c[2], c[3], c[4], c[5]]
    }
}
