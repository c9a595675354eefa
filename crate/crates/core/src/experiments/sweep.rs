use std::path::Path;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Pipeline};
use crate::koopman::{KoopmanModel, TrainingSet};
use crate::mpc::OcpConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Nyström landmark count `m`.
    Landmarks,
    /// MPC horizon `T`.
    Horizon,
}

impl std::str::FromStr for SweepParameter {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "landmarks" | "m" => Ok(Self::Landmarks),
            "horizon" | "T" => Ok(Self::Horizon),
            _ => Err(ExperimentError::InvalidConfig(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

/// One fold of a sweep; failed runs have no errors and carry the message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: usize,
    pub seed: u64,
    pub target: usize,
    #[serde(rename = "mesh_error_m")]
    pub mesh_error: Option<f64>,
    pub fold_error: Option<f64>,
    pub completed: bool,
    pub error: String,
}

/// Median and quartiles of the final mesh error for one parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: SweepParameter,
    pub value: usize,
    pub runs: usize,
    pub failures: usize,
    #[serde(rename = "median_m")]
    pub median: f64,
    #[serde(rename = "q1_m")]
    pub q1: f64,
    #[serde(rename = "q3_m")]
    pub q3: f64,
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Fold every target for every `(value, seed)` pair.
///
/// The seed picks the landmark subset of the fit. Individual failures are
/// recorded in their row and the sweep carries on.
pub fn sweep(
    pipeline: &Pipeline,
    data: &TrainingSet,
    targets: &[DVector<f64>],
    parameter: SweepParameter,
    values: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, ExperimentError> {
    if values.is_empty() || seeds.is_empty() || targets.is_empty() {
        return Err(ExperimentError::InvalidConfig("sweep needs values, seeds and targets".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        for &seed in seeds {
            let (landmarks, horizon) = match parameter {
                SweepParameter::Landmarks => (value, pipeline.config.mpc.horizon),
                SweepParameter::Horizon => (pipeline.config.model.landmarks, value),
            };
            let row = |target: usize, outcome: Result<(f64, f64, bool), String>| {
                let (mesh_error, fold_error, completed, error) = match outcome {
                    Ok((m, f, c)) => (Some(m), Some(f), c, String::new()),
                    Err(e) => (None, None, false, e),
                };
                SweepRow { parameter, value, seed, target, mesh_error, fold_error, completed, error }
            };
            let model = match pipeline.fit(data, landmarks, seed) {
                Ok(m) => m,
                Err(e) => {
                    warn!("{parameter:?} = {value}, seed {seed}: fit failed: {e}");
                    rows.extend((0..targets.len()).map(|t| row(t, Err(e.to_string()))));
                    continue;
                }
            };
            let mpc = OcpConfig { horizon, ..pipeline.config.mpc };
            let batch: Vec<SweepRow> = targets
                .par_iter()
                .enumerate()
                .map(|(t, target)| row(t, run_one(pipeline, &model, target, &mpc)))
                .collect();
            for r in &batch {
                info!("{parameter:?} = {value}, seed {seed}, target {}: mesh error {:?}", r.target, r.mesh_error);
            }
            rows.extend(batch);
        }
    }
    Ok(rows)
}

fn run_one(pipeline: &Pipeline, model: &KoopmanModel, target: &DVector<f64>, mpc: &OcpConfig) -> Result<(f64, f64, bool), String> {
    let outcome = pipeline.fold(model, target, mpc).map_err(|e| e.to_string())?;
    Ok((outcome.metrics.mesh_error, outcome.metrics.fold_error, outcome.result.completed()))
}

/// Group rows by value, in order of first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(SweepParameter, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.parameter, r.value)) {
            keys.push((r.parameter, r.value));
        }
    }
    keys.into_iter()
        .map(|(parameter, value)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.parameter == parameter && r.value == value).collect();
            let mut errs: Vec<f64> = group.iter().filter_map(|r| r.mesh_error).collect();
            errs.sort_by(f64::total_cmp);
            SweepSummary {
                parameter,
                value,
                runs: group.len(),
                failures: group.len() - errs.len(),
                median: quantile(&errs, 0.5),
                q1: quantile(&errs, 0.25),
                q3: quantile(&errs, 0.75),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ExperimentError::Format(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| ExperimentError::Format(e.to_string()))).collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    write_rows(path, rows)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, ExperimentError> {
    read_rows(path)
}

pub fn write_summary_csv(path: &Path, rows: &[SweepSummary]) -> Result<(), ExperimentError> {
    write_rows(path, rows)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SweepSummary>, ExperimentError> {
    read_rows(path)
}
