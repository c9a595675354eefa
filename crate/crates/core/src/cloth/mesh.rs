use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::ClothError;

/// A pair of nodes whose distance is held at `rest_length`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
}

/// Quad cell with nodes ordered counter-clockwise in the rest plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub nodes: [usize; 4],
    pub rest_area: f64,
}

/// Regular quadrilateral cloth mesh.
///
/// Node `(r, c)` has index `r * cols + c` and rests at
/// `(r * width / (rows - 1), c * height / (cols - 1), 0)`. Stacked state
/// vectors use the block layout `(x_0..x_N | y_0..y_N | z_0..z_N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClothMesh {
    pub rows: usize,
    pub cols: usize,
    pub width: f64,
    pub height: f64,
    pub rest_positions: DVector<f64>,
    pub edges: Vec<Edge>,
    pub quads: Vec<Quad>,
    pub diagonals: Vec<Edge>,
}

impl ClothMesh {
    pub fn new(rows: usize, cols: usize, width: f64, height: f64) -> Result<Self, ClothError> {
        if rows < 2 || cols < 2 {
            return Err(ClothError::InvalidMesh(format!(
                "need at least 2x2 nodes, got {rows}x{cols}"
            )));
        }
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(ClothError::InvalidMesh(format!(
                "side lengths must be positive, got {width} x {height}"
            )));
        }
        let n = rows * cols;
        let dx = width / (rows - 1) as f64;
        let dy = height / (cols - 1) as f64;
        let mut rest = DVector::zeros(3 * n);
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                rest[k] = r as f64 * dx;
                rest[n + k] = c as f64 * dy;
            }
        }

        let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                if r + 1 < rows {
                    edges.push(Edge { a: k, b: k + cols, rest_length: dx });
                }
                if c + 1 < cols {
                    edges.push(Edge { a: k, b: k + 1, rest_length: dy });
                }
            }
        }

        let diag = dx.hypot(dy);
        let mut quads = Vec::with_capacity((rows - 1) * (cols - 1));
        let mut diagonals = Vec::with_capacity((rows - 1) * (cols - 1));
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let k = r * cols + c;
                quads.push(Quad {
                    nodes: [k, k + cols, k + cols + 1, k + 1],
                    rest_area: dx * dy,
                });
                diagonals.push(Edge { a: k, b: k + cols + 1, rest_length: diag });
            }
        }

        Ok(Self { rows, cols, width, height, rest_positions: rest, edges, quads, diagonals })
    }

    pub fn num_nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn state_dim(&self) -> usize {
        3 * self.num_nodes()
    }

    pub fn node(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.rows && c < self.cols);
        r * self.cols + c
    }

    /// `(row, col)` grid coordinates of node `k`.
    pub fn grid_coords(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.width / (self.rows - 1) as f64, self.height / (self.cols - 1) as f64)
    }

    pub fn total_rest_area(&self) -> f64 {
        self.quads.iter().map(|q| q.rest_area).sum()
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (r, c) = self.grid_coords(k);
        r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols
    }

    /// Nodes sharing a quad with `a` (including `a` itself) are "adjacent".
    pub fn within_one_ring(&self, a: usize, b: usize) -> bool {
        let (ra, ca) = self.grid_coords(a);
        let (rb, cb) = self.grid_coords(b);
        ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1
    }

    /// Rest configuration lifted to height `z`.
    pub fn flat_state(&self, z: f64) -> DVector<f64> {
        let n = self.num_nodes();
        let mut phi = self.rest_positions.clone();
        phi.rows_mut(2 * n, n).fill(z);
        phi
    }
}

/// Position of node `k` in a stacked state vector.
pub fn node_position(phi: &DVector<f64>, k: usize) -> Vector3<f64> {
    let n = phi.len() / 3;
    Vector3::new(phi[k], phi[n + k], phi[2 * n + k])
}

pub fn set_node_position(phi: &mut DVector<f64>, k: usize, p: &Vector3<f64>) {
    let n = phi.len() / 3;
    phi[k] = p.x;
    phi[n + k] = p.y;
    phi[2 * n + k] = p.z;
}
