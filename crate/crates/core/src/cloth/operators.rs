use nalgebra::{DMatrix, DVector};

use super::ClothMesh;

/// Precomputed mass and bending operators of a mesh.
#[derive(Clone, Debug)]
pub struct ClothOperators {
    /// Lumped node areas (m²); scale by `rho` or `delta` at the use site.
    pub mass: DVector<f64>,
    /// `K = Lᵀ diag(mass) L`, acting on each coordinate block separately.
    pub stiffness: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
}

impl ClothOperators {
    pub fn new(mesh: &ClothMesh) -> Self {
        let mass = mass_matrix(mesh);
        let laplacian = laplacian(mesh);
        let stiffness = stiffness_from(&laplacian, &mass);
        Self { mass, stiffness, laplacian }
    }
}

/// Each node receives a quarter of the area of every incident quad.
pub fn mass_matrix(mesh: &ClothMesh) -> DVector<f64> {
    let mut m = DVector::zeros(mesh.num_nodes());
    for q in &mesh.quads {
        for &k in &q.nodes {
            m[k] += 0.25 * q.rest_area;
        }
    }
    m
}

/// Degree-normalized graph Laplacian `(Lφ)_k = φ_k - mean(φ_neighbors)` over
/// the grid edges.
///
/// Rows of boundary nodes are left at zero, so a flat sheet (of any in-plane
/// placement) carries no bending energy; the one-sided boundary stencil would
/// otherwise pull boundary nodes inward.
pub fn laplacian(mesh: &ClothMesh) -> DMatrix<f64> {
    let n = mesh.num_nodes();
    let mut neighbors = vec![Vec::with_capacity(4); n];
    for e in &mesh.edges {
        neighbors[e.a].push(e.b);
        neighbors[e.b].push(e.a);
    }
    let mut l = DMatrix::zeros(n, n);
    for k in 0..n {
        if mesh.is_boundary(k) {
            continue;
        }
        let w = 1.0 / neighbors[k].len() as f64;
        l[(k, k)] = 1.0;
        for &j in &neighbors[k] {
            l[(k, j)] -= w;
        }
    }
    l
}

pub fn bending_stiffness(mesh: &ClothMesh, mass: &DVector<f64>) -> DMatrix<f64> {
    stiffness_from(&laplacian(mesh), mass)
}

fn stiffness_from(l: &DMatrix<f64>, mass: &DVector<f64>) -> DMatrix<f64> {
    let ml = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| mass[i] * l[(i, j)]);
    let k = l.transpose() * ml;
    // exact symmetry
    (&k + k.transpose()) * 0.5
}
