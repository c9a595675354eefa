use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use super::mesh::{ClothMesh, Edge};

/// Which distance constraints make up the inextensibility set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthConstraints {
    /// Grid edges plus one diagonal per quad. Every triangle is rigid, so the
    /// sheet can only crease along edge lines and locks under curved folds.
    EdgesAndDiagonals,
    /// Grid edges only; quads may shear.
    #[default]
    EdgesOnly,
}

impl LengthConstraints {
    pub fn select(self, mesh: &ClothMesh) -> Vec<Edge> {
        let mut out = mesh.edges.clone();
        if self == LengthConstraints::EdgesAndDiagonals {
            out.extend_from_slice(&mesh.diagonals);
        }
        out
    }
}

/// Equality residuals `C(φ)` and their Jacobian.
#[derive(Clone, Debug)]
pub struct LengthResiduals {
    pub values: DVector<f64>,
    pub jacobian: CsrMatrix<f64>,
}

/// Squared-length residuals `‖p_a − p_b‖² − l²` for every edge and quad diagonal.
pub fn inextensibility(mesh: &ClothMesh, phi: &DVector<f64>) -> LengthResiduals {
    length_residuals(&LengthConstraints::EdgesAndDiagonals.select(mesh), phi)
}

pub fn length_residuals(constraints: &[Edge], phi: &DVector<f64>) -> LengthResiduals {
    let n = phi.len() / 3;
    let mut values = DVector::zeros(constraints.len());
    let mut coo = CooMatrix::new(constraints.len(), 3 * n);
    for (i, e) in constraints.iter().enumerate() {
        let mut sq = 0.0;
        for d in 0..3 {
            let diff = phi[d * n + e.a] - phi[d * n + e.b];
            sq += diff * diff;
            coo.push(i, d * n + e.a, 2.0 * diff);
            coo.push(i, d * n + e.b, -2.0 * diff);
        }
        values[i] = sq - e.rest_length * e.rest_length;
    }
    LengthResiduals { values, jacobian: CsrMatrix::from(&coo) }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactConfig {
    /// Minimum vertical gap between stacked layers (m).
    #[serde(rename = "thickness_m")]
    pub thickness: f64,
    /// Constraints are emitted only while `H < activation_margin` (m).
    #[serde(rename = "activation_margin_m")]
    pub activation_margin: f64,
    /// Layer pairs must be closer than this fraction of the smaller cell side in xy.
    pub layer_radius_factor: f64,
    /// Allowed relative stretch of quad diagonals before the shear limit binds.
    pub shear_stretch: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self { thickness: 0.002, activation_margin: 0.005, layer_radius_factor: 0.5, shear_stretch: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactKind {
    /// `H = z_k − table_z`.
    Table { node: usize },
    /// `H = z_upper − z_lower − thickness`.
    Layer { upper: usize, lower: usize },
    /// Quad diagonal that may shorten (fold) but not stretch past `l`:
    /// `H = (l² − ‖p_a − p_b‖²) / (2l)`, `l` the rest diagonal times
    /// `1 + shear_stretch`.
    Shear { a: usize, b: usize },
}

/// Active unilateral constraints `H(φ) ≥ 0`.
#[derive(Clone, Debug)]
pub struct ContactSet {
    pub kinds: Vec<ContactKind>,
    pub values: DVector<f64>,
    pub jacobian: CsrMatrix<f64>,
}

impl ContactSet {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Most negative residual, or `+∞` when empty.
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Table and layer-separation contacts near activation.
pub fn contacts(mesh: &ClothMesh, phi: &DVector<f64>, table_z: f64, config: &ContactConfig) -> ContactSet {
    contacts_excluding(mesh, phi, table_z, config, &[])
}

/// As [`contacts`], skipping every constraint that involves a node of `excluded`.
pub fn contacts_excluding(
    mesh: &ClothMesh,
    phi: &DVector<f64>,
    table_z: f64,
    config: &ContactConfig,
    excluded: &[usize],
) -> ContactSet {
    contacts_oriented(mesh, phi, phi, table_z, config, excluded)
}

/// As [`contacts_excluding`], deciding which node of a layer pair lies on top
/// from `reference` (typically the previous time step) so the stacking order
/// stays fixed while `phi` is being corrected.
pub fn contacts_oriented(
    mesh: &ClothMesh,
    phi: &DVector<f64>,
    reference: &DVector<f64>,
    table_z: f64,
    config: &ContactConfig,
    excluded: &[usize],
) -> ContactSet {
    let n = mesh.num_nodes();
    let z = |k: usize| phi[2 * n + k];
    let above = |a: usize, b: usize| {
        let (ra, rb) = (reference[2 * n + a], reference[2 * n + b]);
        if ra != rb {
            ra > rb
        } else {
            z(a) > z(b)
        }
    };
    let mut kinds = Vec::new();

    for k in 0..n {
        if excluded.contains(&k) {
            continue;
        }
        if z(k) - table_z < config.activation_margin {
            kinds.push(ContactKind::Table { node: k });
        }
    }

    let (dx, dy) = mesh.cell_size();
    let radius = config.layer_radius_factor * dx.min(dy);
    let r2 = radius * radius;
    for a in 0..n {
        if excluded.contains(&a) {
            continue;
        }
        for b in a + 1..n {
            if excluded.contains(&b) || mesh.within_one_ring(a, b) {
                continue;
            }
            let ddx = phi[a] - phi[b];
            let ddy = phi[n + a] - phi[n + b];
            if ddx * ddx + ddy * ddy >= r2 {
                continue;
            }
            let (upper, lower) = if above(a, b) { (a, b) } else { (b, a) };
            let h = z(upper) - z(lower) - config.thickness;
            if h < config.activation_margin {
                kinds.push(ContactKind::Layer { upper, lower });
            }
        }
    }

    ContactSet::from_kinds(mesh, kinds, phi, table_z, config)
}

/// Both diagonals of every quad whose stretch limit is near activation.
pub fn shear_limits(mesh: &ClothMesh, phi: &DVector<f64>, config: &ContactConfig, excluded: &[usize]) -> Vec<ContactKind> {
    let n = mesh.num_nodes();
    let (dx, dy) = mesh.cell_size();
    let diag = dx.hypot(dy) * (1.0 + config.shear_stretch);
    let mut out = Vec::new();
    for q in &mesh.quads {
        for (a, b) in [(q.nodes[0], q.nodes[2]), (q.nodes[1], q.nodes[3])] {
            if excluded.contains(&a) && excluded.contains(&b) {
                continue;
            }
            let sq: f64 = (0..3).map(|d| (phi[d * n + a] - phi[d * n + b]).powi(2)).sum();
            if (diag * diag - sq) / (2.0 * diag) < config.activation_margin {
                out.push(ContactKind::Shear { a, b });
            }
        }
    }
    out
}

impl ContactSet {
    /// Evaluate the given constraints at `phi`, regardless of activation.
    pub fn from_kinds(
        mesh: &ClothMesh,
        kinds: Vec<ContactKind>,
        phi: &DVector<f64>,
        table_z: f64,
        config: &ContactConfig,
    ) -> Self {
        let n = phi.len() / 3;
        let (dx, dy) = mesh.cell_size();
        let diag = dx.hypot(dy) * (1.0 + config.shear_stretch);
        let mut coo = CooMatrix::new(kinds.len(), 3 * n);
        let mut values = DVector::zeros(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            match *kind {
                ContactKind::Table { node } => {
                    coo.push(i, 2 * n + node, 1.0);
                    values[i] = phi[2 * n + node] - table_z;
                }
                ContactKind::Layer { upper, lower } => {
                    coo.push(i, 2 * n + upper, 1.0);
                    coo.push(i, 2 * n + lower, -1.0);
                    values[i] = phi[2 * n + upper] - phi[2 * n + lower] - config.thickness;
                }
                ContactKind::Shear { a, b } => {
                    let mut sq = 0.0;
                    for d in 0..3 {
                        let diff = phi[d * n + a] - phi[d * n + b];
                        sq += diff * diff;
                        coo.push(i, d * n + a, -diff / diag);
                        coo.push(i, d * n + b, diff / diag);
                    }
                    values[i] = (diag * diag - sq) / (2.0 * diag);
                }
            }
        }
        Self { kinds, values, jacobian: CsrMatrix::from(&coo) }
    }
}
