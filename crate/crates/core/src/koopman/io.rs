//! Binary model container: magic, version, JSON metadata, then shape-tagged
//! little-endian `f64` arrays in column-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{KernelSpec, KoopmanError, KoopmanModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CLOTHKM\0";
const ARRAYS: [&str; 6] = ["mean", "landmarks", "lift_matrix", "a_matrix", "b_matrix", "recon_matrix"];

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    nodes: usize,
    landmarks: usize,
    kernel_family: String,
    lengthscale: f64,
    jitter: f64,
    gamma: f64,
    lambda_rec: f64,
    seed: u64,
    n_train: usize,
    centered: bool,
    arrays: Vec<String>,
}

fn fmt_err(msg: impl Into<String>) -> KoopmanError {
    KoopmanError::Format(msg.into())
}

fn write_array<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, KoopmanError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_array<R: Read>(r: &mut R, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>, KoopmanError> {
    let (fr, fc) = (read_u64(r)? as usize, read_u64(r)? as usize);
    if (fr, fc) != (rows, cols) {
        return Err(fmt_err(format!("{name}: expected {rows}×{cols}, found {fr}×{fc}")));
    }
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)?;
    let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_iterator(rows, cols, data))
}

pub fn encode_model<W: Write>(model: &KoopmanModel, mut w: W) -> Result<(), KoopmanError> {
    let d = model.state_dim();
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        nodes: d / 3,
        landmarks: model.landmark_count(),
        kernel_family: "gaussian".into(),
        lengthscale: model.kernel.lengthscale,
        jitter: model.kernel.jitter,
        gamma: model.gamma,
        lambda_rec: model.lambda_rec,
        seed: model.seed,
        n_train: model.n_train,
        centered: true,
        arrays: ARRAYS.iter().map(|s| s.to_string()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| fmt_err(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mean = DMatrix::from_column_slice(d, 1, model.mean.as_slice());
    for m in [&mean, &model.landmarks, &model.lift_matrix, &model.a_matrix, &model.b_matrix, &model.recon_matrix] {
        write_array(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn decode_model<R: Read>(mut r: R) -> Result<KoopmanModel, KoopmanError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt_err("not a cloth Koopman model file"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != MODEL_FORMAT_VERSION {
        return Err(fmt_err(format!("unsupported format version {version}")));
    }
    let len = read_u64(&mut r)? as usize;
    if len > 1 << 20 {
        return Err(fmt_err("metadata block too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| fmt_err(e.to_string()))?;
    if h.kernel_family != "gaussian" {
        return Err(fmt_err(format!("unknown kernel family {}", h.kernel_family)));
    }
    let (d, m) = (3 * h.nodes, h.landmarks);
    let mean = read_array(&mut r, d, 1, "mean")?;
    let landmarks = read_array(&mut r, d, m, "landmarks")?;
    let lift_matrix = read_array(&mut r, m, m, "lift_matrix")?;
    let a_matrix = read_array(&mut r, m, m, "a_matrix")?;
    let b_matrix = read_array(&mut r, m, 6, "b_matrix")?;
    let recon_matrix = read_array(&mut r, d, m, "recon_matrix")?;
    Ok(KoopmanModel {
        landmarks,
        kernel: KernelSpec { lengthscale: h.lengthscale, jitter: h.jitter },
        lift_matrix,
        a_matrix,
        b_matrix,
        recon_matrix,
        mean: DVector::from_column_slice(mean.as_slice()),
        gamma: h.gamma,
        lambda_rec: h.lambda_rec,
        seed: h.seed,
        n_train: h.n_train,
    })
}

pub fn write_model(path: impl AsRef<Path>, model: &KoopmanModel) -> Result<(), KoopmanError> {
    encode_model(model, BufWriter::new(File::create(path)?))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<KoopmanModel, KoopmanError> {
    decode_model(BufReader::new(File::open(path)?))
}
