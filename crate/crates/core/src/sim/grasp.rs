use nalgebra::{DVector, Vector3};

use super::SimError;
use crate::cloth::{node_position, ClothMesh};
use crate::Control;

/// Two grasped nodes pinned to prescribed positions.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspSpec {
    pub nodes: [usize; 2],
    pub positions: [Vector3<f64>; 2],
}

impl GraspSpec {
    /// Two nodes that are neighbors along the mesh boundary.
    pub fn adjacent(mesh: &ClothMesh, nodes: [usize; 2], positions: [Vector3<f64>; 2]) -> Result<Self, SimError> {
        let spec = Self::bimanual(mesh, nodes, positions)?;
        let [a, b] = nodes;
        let (ra, ca) = mesh.grid_coords(a);
        let (rb, cb) = mesh.grid_coords(b);
        if ra.abs_diff(rb) + ca.abs_diff(cb) != 1 {
            return Err(SimError::InvalidGrasp(format!("nodes {a} and {b} are not mesh neighbors")));
        }
        let boundary_edge = (ra == rb && (ra == 0 || ra + 1 == mesh.rows))
            || (ca == cb && (ca == 0 || ca + 1 == mesh.cols));
        if !boundary_edge {
            return Err(SimError::InvalidGrasp(format!("edge {a}-{b} is not on the boundary")));
        }
        Ok(spec)
    }

    /// Corner `(0, 0)` and its neighbor `(0, 1)`, held where they are in `phi`.
    pub fn corner(mesh: &ClothMesh, phi: &DVector<f64>) -> Self {
        let nodes = [mesh.node(0, 0), mesh.node(0, 1)];
        Self { nodes, positions: nodes.map(|k| node_position(phi, k)) }
    }

    /// Any two distinct nodes, for two-handed manipulation.
    pub fn bimanual(mesh: &ClothMesh, nodes: [usize; 2], positions: [Vector3<f64>; 2]) -> Result<Self, SimError> {
        let n = mesh.num_nodes();
        if nodes[0] == nodes[1] || nodes.iter().any(|&k| k >= n) {
            return Err(SimError::InvalidGrasp(format!("need two distinct nodes below {n}, got {nodes:?}")));
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(SimError::InvalidGrasp("prescribed positions must be finite".into()));
        }
        Ok(Self { nodes, positions })
    }

    /// Shift the prescribed positions by `[d0; d1]`.
    pub fn advance(&mut self, du: &Control) {
        self.positions[0] += Vector3::new(du[0], du[1], du[2]);
        self.positions[1] += Vector3::new(du[3], du[4], du[5]);
    }

    /// `phi(node) - prescribed`, ordered `[node0 xyz, node1 xyz]`.
    pub fn residual(&self, phi: &DVector<f64>) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (g, (&k, p)) in self.nodes.iter().zip(&self.positions).enumerate() {
            let d = node_position(phi, k) - p;
            out[3 * g..3 * g + 3].copy_from_slice(d.as_slice());
        }
        out
    }

    /// Flat `[x0, y0, z0, x1, y1, z1]` of the prescribed positions.
    pub fn flat_positions(&self) -> Control {
        let [a, b] = &self.positions;
        [a.x, a.y, a.z, b.x, b.y, b.z]
    }
}
