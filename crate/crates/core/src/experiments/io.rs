//! CSV trajectories and datasets, JSON run summaries.
//!
//! Every CSV starts with a `#` line carrying the format name, version and the
//! metadata needed to rebuild the value; the header row follows. Floats are
//! written in shortest round-trip form, so reading back is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ExperimentError, Trajectory};
use crate::koopman::TrainingSet;
use crate::Control;

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Format(msg.into())
}

fn csv_err(e: csv::Error) -> ExperimentError {
    format_err(e.to_string())
}

/// Parse `# <kind> v<version> key=value ...` into its key/value pairs.
fn parse_preamble(line: &str, kind: &str, version: u32) -> Result<Vec<(String, String)>, ExperimentError> {
    let mut parts = line.trim_end().split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some(kind) {
        return Err(format_err(format!("expected a `# {kind}` preamble, found {line:?}")));
    }
    let found = parts.next().and_then(|v| v.strip_prefix('v')).and_then(|v| v.parse::<u32>().ok());
    if found != Some(version) {
        return Err(format_err(format!("unsupported {kind} version {found:?}, expected {version}")));
    }
    parts
        .map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format_err(kv)))
        .collect()
}

fn lookup<T: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<T, ExperimentError> {
    meta.iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| format_err(format!("missing or invalid `{key}` in preamble")))
}

fn parse_f64(field: &str) -> Result<f64, ExperimentError> {
    field.parse().map_err(|_| format_err(format!("not a number: {field:?}")))
}

fn split_preamble<R: Read>(reader: R) -> Result<(String, BufReader<R>), ExperimentError> {
    let mut reader = BufReader::new(reader);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| format_err(e.to_string()))?;
    Ok((first, reader))
}

/// Columns: `time_s`, node coordinates `x_k`, `y_k`, `z_k`, then `du_0 … du_5`.
///
/// Row `k` holds state `k` and the control applied after it; the last row has empty control cells.
pub fn write_trajectory_to<W: Write>(traj: &Trajectory, out: W) -> Result<(), ExperimentError> {
    if traj.states.len() != traj.controls.len() + 1 {
        return Err(format_err("trajectory needs exactly one more state than controls"));
    }
    let dim = traj.states[0].len();
    let n = dim / 3;
    let mut out = BufWriter::new(out);
    writeln!(out, "# clothfold-trajectory v{TRAJECTORY_FORMAT_VERSION} dt={} nodes={n}", traj.dt)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time_s".to_string()];
    for axis in ["x", "y", "z"] {
        header.extend((0..n).map(|k| format!("{axis}_{k}")));
    }
    header.extend((0..6).map(|i| format!("du_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, phi) in traj.states.iter().enumerate() {
        if phi.len() != dim {
            return Err(format_err(format!("state {k} has {} entries, expected {dim}", phi.len())));
        }
        let mut row = Vec::with_capacity(header.len());
        row.push((k as f64 * traj.dt).to_string());
        row.extend(phi.iter().map(f64::to_string));
        match traj.controls.get(k) {
            Some(u) => row.extend(u.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat(String::new()).take(6)),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_from<R: Read>(input: R) -> Result<Trajectory, ExperimentError> {
    let (first, rest) = split_preamble(input)?;
    let meta = parse_preamble(&first, "clothfold-trajectory", TRAJECTORY_FORMAT_VERSION)?;
    let dt: f64 = lookup(&meta, "dt")?;
    let n: usize = lookup(&meta, "nodes")?;
    let mut r = csv::Reader::from_reader(rest);
    let width = 1 + 3 * n + 6;
    if r.headers().map_err(csv_err)?.len() != width {
        return Err(format_err(format!("expected {width} columns")));
    }
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut open = true;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if !open {
            return Err(format_err("rows after the final state"));
        }
        let phi: Result<Vec<f64>, _> = rec.iter().skip(1).take(3 * n).map(parse_f64).collect();
        states.push(DVector::from_vec(phi?));
        let cells: Vec<&str> = rec.iter().skip(1 + 3 * n).collect();
        if cells.iter().all(|c| c.is_empty()) {
            open = false;
        } else {
            let mut u: Control = [0.0; 6];
            for (slot, c) in u.iter_mut().zip(&cells) {
                *slot = parse_f64(c)?;
            }
            controls.push(u);
        }
    }
    if states.is_empty() || open {
        return Err(format_err("trajectory must end with a state row without controls"));
    }
    Ok(Trajectory { dt, states, controls })
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), ExperimentError> {
    write_trajectory_to(traj, File::create(path)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, ExperimentError> {
    read_trajectory_from(File::open(path)?)
}

/// Columns: inputs `x_i`, controls `u_0 … u_5`, outputs `y_i`; one row per triple.
pub fn write_training_set_to<W: Write>(data: &TrainingSet, out: W) -> Result<(), ExperimentError> {
    let d = data.state_dim();
    let mut out = BufWriter::new(out);
    writeln!(out, "# clothfold-dataset v{DATASET_FORMAT_VERSION} state_dim={d}")?;
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..d)
        .map(|i| format!("x_{i}"))
        .chain((0..6).map(|i| format!("u_{i}")))
        .chain((0..d).map(|i| format!("y_{i}")))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for j in 0..data.len() {
        let row: Vec<String> = data
            .inputs
            .column(j)
            .iter()
            .chain(data.controls.column(j).iter())
            .chain(data.outputs.column(j).iter())
            .map(f64::to_string)
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_set_from<R: Read>(input: R) -> Result<TrainingSet, ExperimentError> {
    let (first, rest) = split_preamble(input)?;
    let meta = parse_preamble(&first, "clothfold-dataset", DATASET_FORMAT_VERSION)?;
    let d: usize = lookup(&meta, "state_dim")?;
    let mut r = csv::Reader::from_reader(rest);
    if r.headers().map_err(csv_err)?.len() != 2 * d + 6 {
        return Err(format_err(format!("expected {} columns", 2 * d + 6)));
    }
    let mut values = Vec::new();
    for rec in r.records() {
        for field in rec.map_err(csv_err)?.iter() {
            values.push(parse_f64(field)?);
        }
    }
    let rows = values.len() / (2 * d + 6);
    // Each record is one column of the stacked [x; u; y] matrix.
    let stacked = DMatrix::from_column_slice(2 * d + 6, rows, &values);
    Ok(TrainingSet::new(
        stacked.rows(0, d).into_owned(),
        stacked.rows(d, 6).into_owned(),
        stacked.rows(d + 6, d).into_owned(),
    )?)
}

pub fn write_training_set(path: &Path, data: &TrainingSet) -> Result<(), ExperimentError> {
    write_training_set_to(data, File::create(path)?)
}

pub fn read_training_set(path: &Path) -> Result<TrainingSet, ExperimentError> {
    read_training_set_from(File::open(path)?)
}

/// Pretty-printed JSON, newline terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| format_err(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(|e| format_err(e.to_string()))
}
