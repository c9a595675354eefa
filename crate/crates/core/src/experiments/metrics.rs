use log::warn;
use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::cloth::{node_position, ClothMesh};
use crate::Control;

/// Final-pose quality of one fold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    /// Mean node distance after rigid alignment (m).
    pub mesh_error: f64,
    pub running_cost: f64,
    pub fold_ratio: f64,
    pub target_fold_ratio: f64,
    pub fold_error: f64,
}

fn nodes(phi: &DVector<f64>) -> Vec<Vector3<f64>> {
    (0..phi.len() / 3).map(|k| node_position(phi, k)).collect()
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Rotation `R` minimizing `Σ ‖R a_i − b_i‖²` for centered clouds (Kabsch).
///
/// Falls back to the identity when the cross-covariance has rank below two.
pub fn optimal_rotation(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Matrix3<f64> {
    let h: Matrix3<f64> = a.iter().zip(b).map(|(x, y)| x * y.transpose()).sum();
    let svd = h.svd(true, true);
    let s = svd.singular_values;
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        warn!("degenerate cross-covariance; alignment falls back to the identity");
        return Matrix3::identity();
    }
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    vt.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose()
}

/// Mean per-node distance after centering both meshes and rotating the target onto the result.
pub fn mesh_error(phi_final: &DVector<f64>, phi_target: &DVector<f64>) -> Result<f64, ExperimentError> {
    if phi_final.len() != phi_target.len() || phi_final.is_empty() || phi_final.len() % 3 != 0 {
        return Err(ExperimentError::InvalidConfig(format!(
            "mesh sizes differ: {} vs {}",
            phi_final.len(),
            phi_target.len()
        )));
    }
    let (f, t) = (nodes(phi_final), nodes(phi_target));
    let (cf, ct) = (centroid(&f), centroid(&t));
    let f: Vec<_> = f.iter().map(|p| p - cf).collect();
    let t: Vec<_> = t.iter().map(|p| p - ct).collect();
    let r = optimal_rotation(&t, &f);
    Ok(t.iter().zip(&f).map(|(a, b)| (r * a - b).norm()).sum::<f64>() / f.len() as f64)
}

/// Per-step terms `(φ_κ − φ_r)ᵀQ′(φ_κ − φ_r) + Δu_κᵀRΔu_κ`; steps past the last control have `Δu = 0`.
pub fn cost_terms(
    states: &[DVector<f64>],
    controls: &[Control],
    phi_target: &DVector<f64>,
    q_prime: f64,
    r_weight: f64,
) -> Result<Vec<f64>, ExperimentError> {
    if controls.len() > states.len() {
        return Err(ExperimentError::InvalidConfig("more controls than states".into()));
    }
    states
        .iter()
        .enumerate()
        .map(|(k, phi)| {
            if phi.len() != phi_target.len() {
                return Err(ExperimentError::InvalidConfig("state and target sizes differ".into()));
            }
            let e = (phi - phi_target).norm_squared();
            let u = controls.get(k).map_or(0.0, |u| u.iter().map(|v| v * v).sum());
            Ok(q_prime * e + r_weight * u)
        })
        .collect()
}

/// Cumulative cost `Σ_{κ=0}^{t_max}` of the per-step terms.
pub fn running_cost(
    states: &[DVector<f64>],
    controls: &[Control],
    phi_target: &DVector<f64>,
    q_prime: f64,
    r_weight: f64,
    t_max: usize,
) -> Result<f64, ExperimentError> {
    if states.len() <= t_max || controls.len() < t_max {
        return Err(ExperimentError::InvalidConfig(format!(
            "trajectory has {} states and {} controls, need t_max = {t_max}",
            states.len(),
            controls.len()
        )));
    }
    Ok(cost_terms(&states[..=t_max], &controls[..(t_max + 1).min(controls.len())], phi_target, q_prime, r_weight)?
        .iter()
        .sum())
}

/// `𝒥(t)` for each `t` in `t_values`, divided by the value at the largest `t`.
pub fn normalized_cost_curve(terms: &[f64], t_values: &[usize]) -> Vec<f64> {
    let cum: Vec<f64> = terms
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let t_last = t_values.iter().copied().max().unwrap_or(0).min(cum.len().saturating_sub(1));
    let denom = cum.get(t_last).copied().unwrap_or(0.0);
    t_values
        .iter()
        .map(|&t| {
            let v = cum[t.min(cum.len() - 1)];
            if denom > 0.0 {
                v / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Top-down footprint of `phi` relative to the flat rest pose, on a grid of `1/subdivisions` mesh cells.
pub fn folding_ratio_with(phi: &DVector<f64>, mesh: &ClothMesh, subdivisions: usize) -> f64 {
    let rest = footprint_cells(&mesh.flat_state(0.0), mesh, subdivisions);
    footprint_cells(phi, mesh, subdivisions) as f64 / rest as f64
}

/// Footprint ratio at a quarter of the mesh cell size.
pub fn folding_ratio(phi: &DVector<f64>, mesh: &ClothMesh) -> f64 {
    folding_ratio_with(phi, mesh, 4)
}

/// Grid cells whose centers fall inside the xy projection of some quad.
fn footprint_cells(phi: &DVector<f64>, mesh: &ClothMesh, subdivisions: usize) -> usize {
    let (dx, dy) = mesh.cell_size();
    let (hx, hy) = (dx / subdivisions as f64, dy / subdivisions as f64);
    let n = mesh.num_nodes();
    let xy = |k: usize| (phi[k], phi[n + k]);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..n {
        let (x, y) = xy(k);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // Cells are anchored at the origin so the rest pose always lands on the same lattice.
    let (i0, j0) = ((x0 / hx).floor() as i64, (y0 / hy).floor() as i64);
    let (ni, nj) = (((x1 / hx).ceil() as i64 - i0 + 1) as usize, ((y1 / hy).ceil() as i64 - j0 + 1) as usize);
    let mut occupied = vec![false; ni * nj];
    for q in &mesh.quads {
        let [a, b, c, d] = q.nodes.map(xy);
        for tri in [[a, b, c], [a, c, d]] {
            let (tx0, tx1) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
            let (ty0, ty1) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
            let ia = ((tx0 / hx - 0.5).ceil() as i64).max(i0);
            let ib = ((tx1 / hx - 0.5).floor() as i64).min(i0 + ni as i64 - 1);
            let ja = ((ty0 / hy - 0.5).ceil() as i64).max(j0);
            let jb = ((ty1 / hy - 0.5).floor() as i64).min(j0 + nj as i64 - 1);
            for i in ia..=ib {
                for j in ja..=jb {
                    let p = ((i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy);
                    if in_triangle(p, tri) {
                        occupied[(i - i0) as usize * nj + (j - j0) as usize] = true;
                    }
                }
            }
        }
    }
    occupied.iter().filter(|&&o| o).count()
}

fn in_triangle(p: (f64, f64), [a, b, c]: [(f64, f64); 3]) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// `|ℛ_real − ℛ_target| / ℛ_target`.
pub fn fold_error(ratio_achieved: f64, ratio_target: f64) -> Result<f64, ExperimentError> {
    if !(ratio_target > 0.0) {
        return Err(ExperimentError::InvalidConfig(format!("target fold ratio must be positive, got {ratio_target}")));
    }
    Ok((ratio_achieved - ratio_target).abs() / ratio_target)
}
