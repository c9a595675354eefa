use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DVector, Vector3};

use super::*;
use crate::cloth::{node_position, ClothMesh, ClothOperators, ClothParams, ContactKind, LengthConstraints};
use crate::Control;

fn desk_mesh() -> ClothMesh {
    ClothMesh::new(9, 7, 0.59, 0.42).unwrap()
}

fn context(config: SimConfig) -> Arc<SimContext> {
    Arc::new(SimContext::new(desk_mesh(), ClothParams::default(), config).unwrap())
}

/// Corner lift-and-place along a tilted parabola with a minimum-jerk profile, then a hold.
fn parabola_controls(mesh: &ClothMesh, move_steps: usize, total: usize) -> Vec<Control> {
    let (w, h) = (mesh.width, mesh.height);
    let point = |s: f64| {
        let bump = 4.0 * s * (1.0 - s);
        Vector3::new(s * w, 0.2 * h * bump, 0.25 * bump)
    };
    let profile = |t: f64| t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let mut out = Vec::with_capacity(total);
    let mut prev = point(0.0);
    for j in 1..=total {
        let p = point(profile((j as f64 / move_steps as f64).min(1.0)));
        let d = p - prev;
        out.push([d.x, d.y, d.z, d.x, d.y, d.z]);
        prev = p;
    }
    out
}

#[test]
fn free_fall_onset_unit_density() {
    let mesh = desk_mesh();
    let ops = ClothOperators::new(&mesh);
    let params = ClothParams { rho: 1.0, delta: 1.0, kappa: 0.0, alpha_damp: 1.4, mu: 0.0, gravity: 9.8 };
    let dt = 0.01;
    let state = ClothState::at_rest(mesh.flat_state(0.3));
    let phi0 = unconstrained_step(&state, &ops, &params, dt).unwrap();
    let n = mesh.num_nodes();
    let expected = -dt * 9.8 / (1.0 + dt * 1.4);
    for k in 0..n {
        assert_relative_eq!((phi0[2 * n + k] - 0.3) / dt, expected, max_relative = 1e-12);
        assert_eq!(phi0[k], state.phi[k]);
    }
}

#[test]
fn free_fall_onset_general_density() {
    let mesh = desk_mesh();
    let ops = ClothOperators::new(&mesh);
    let params = ClothParams { kappa: 0.0, ..ClothParams::default() };
    let dt = 0.01;
    let phi0 = unconstrained_step(&ClothState::at_rest(mesh.flat_state(0.0)), &ops, &params, dt).unwrap();
    let n = mesh.num_nodes();
    // decoupled z equation: (rho + dt alpha) v = -dt delta g
    let v = -dt * params.delta * params.gravity / (params.rho + dt * params.alpha_damp);
    assert_relative_eq!(phi0[2 * n + 5] / dt, v, max_relative = 1e-12);
}

#[test]
fn no_gravity_keeps_resting_cloth() {
    let mesh = desk_mesh();
    let ops = ClothOperators::new(&mesh);
    let params = ClothParams { delta: 0.0, ..ClothParams::default() };
    let state = ClothState::at_rest(mesh.flat_state(0.0));
    let phi0 = unconstrained_step(&state, &ops, &params, 0.01).unwrap();
    assert!((phi0 - &state.phi).amax() < 1e-15);
}

#[test]
fn heavy_damping_freezes_motion() {
    let mesh = desk_mesh();
    let ops = ClothOperators::new(&mesh);
    let params = ClothParams { alpha_damp: 1e12, ..ClothParams::default() };
    let mut state = ClothState::at_rest(mesh.flat_state(0.2));
    state.phi_dot.fill(1.0);
    let phi0 = unconstrained_step(&state, &ops, &params, 0.01).unwrap();
    assert!((phi0 - &state.phi).amax() < 1e-9);
}

#[test]
fn rejects_non_positive_dt() {
    let mesh = desk_mesh();
    let ops = ClothOperators::new(&mesh);
    let state = ClothState::at_rest(mesh.flat_state(0.0));
    assert!(unconstrained_step(&state, &ops, &ClothParams::default(), 0.0).is_err());
}

#[test]
fn feasible_prediction_is_returned_unchanged() {
    let ctx = context(SimConfig::default());
    let state = ClothState::at_rest(ctx.mesh.flat_state(0.5));
    let grasp = GraspSpec::corner(&ctx.mesh, &state.phi);
    let mut cache = StepCache::new(&ctx);
    let out = ctx.project_step(&state.phi, &state, &grasp, &mut cache).unwrap();
    assert_eq!(out.outer_iterations, 0);
    assert!(out.converged);
    assert_eq!(out.state.phi, state.phi);
}

#[test]
fn stretched_edge_is_restored_symmetrically() {
    let mesh = ClothMesh::new(4, 2, 0.3, 0.1).unwrap();
    let config = SimConfig { length_constraints: LengthConstraints::EdgesOnly, ..SimConfig::default() };
    let ctx = SimContext::new(mesh, ClothParams::default(), config).unwrap();
    let n = ctx.mesh.num_nodes();
    let mut phi = ctx.mesh.flat_state(0.5);
    let (a, b) = (ctx.mesh.node(3, 0), ctx.mesh.node(3, 1));
    // stretch the far edge by 1% symmetrically
    phi[n + a] -= 0.0005;
    phi[n + b] += 0.0005;
    let state = ClothState::at_rest(phi.clone());
    let grasp = GraspSpec::corner(&ctx.mesh, &phi);
    let mut cache = StepCache::new(&ctx);
    let out = ctx.project_step(&phi, &state, &grasp, &mut cache).unwrap();
    assert!(out.converged && out.outer_iterations <= 5, "{out:?}");
    let report = ctx.constraint_report(&out.state.phi, &grasp);
    assert!(report.max_length_residual <= 1e-6);
    let da = out.state.phi[n + a] - phi[n + a];
    let db = out.state.phi[n + b] - phi[n + b];
    assert!(da > 0.0 && db < 0.0);
    assert_relative_eq!(da, -db, max_relative = 1e-6);
    // equal masses share the correction: each end moves back by about half the stretch
    assert_relative_eq!(da, 0.0005, max_relative = 1e-2);
}

#[test]
fn penetrating_node_is_pushed_onto_table() {
    let ctx = context(SimConfig::default());
    let n = ctx.mesh.num_nodes();
    let state = ctx.rest_state();
    let grasp = GraspSpec::corner(&ctx.mesh, &state.phi);
    let mut phi0 = state.phi.clone();
    let k = ctx.mesh.node(4, 3);
    phi0[2 * n + k] = -0.003;
    let mut cache = StepCache::new(&ctx);
    let out = ctx.project_step(&phi0, &state, &grasp, &mut cache).unwrap();
    assert!(out.state.phi[2 * n + k] >= -1e-6);
    assert!(cache.normal_impulse.iter().all(|v| *v >= 0.0));
    assert!(cache.normal_impulse[k] > 0.0);
}

fn single_table_contact(k: usize) -> crate::cloth::ContactSet {
    let mesh = ClothMesh::new(2, 2, 1.0, 1.0).unwrap();
    let mut set = crate::cloth::contacts(&mesh, &mesh.flat_state(0.0), 0.0, &Default::default());
    set.kinds.retain(|c| *c == ContactKind::Table { node: k });
    set
}

#[test]
fn friction_vanishes_without_coefficient() {
    let v = DVector::from_element(12, 1.0);
    let f = friction_term(&v, &single_table_contact(1), &DVector::from_element(12, 0.1), &DVector::from_element(4, 1.0), 0.0);
    assert!(f.iter().all(|x| *x == 0.0));
}

#[test]
fn friction_sticks_under_large_coefficient() {
    let mut v = DVector::zeros(12);
    v[1] = 3.0;
    v[5] = 4.0;
    let m = DVector::from_element(12, 0.2);
    let f = friction_term(&v, &single_table_contact(1), &m, &DVector::from_element(4, 1.0), 1e6);
    // full stop: impulse m |v_t| against the motion
    assert_relative_eq!(f[1], -0.2 * 3.0, max_relative = 1e-14);
    assert_relative_eq!(f[5], -0.2 * 4.0, max_relative = 1e-14);
    assert_eq!(f[9], 0.0);
    assert_eq!(f[0], 0.0);
}

#[test]
fn friction_slows_sliding_node() {
    let mut v = DVector::zeros(12);
    v[1] = 2.0;
    let (m, mu, normal) = (0.2, 0.3, 0.5);
    let f = friction_term(&v, &single_table_contact(1), &DVector::from_element(12, m), &DVector::from_element(4, normal), mu);
    let after = v[1] + f[1] / m;
    assert_relative_eq!(v[1] - after, mu * normal / m, max_relative = 1e-14);
}

#[test]
fn resting_cloth_stays_put() {
    let ctx = context(SimConfig::default());
    let mut sim = Simulator::corner_grasp(ctx.clone());
    sim.settle(30).unwrap();
    let settled = sim.state().clone();
    assert!(settled.max_speed() <= 1e-3, "speed {}", settled.max_speed());
    sim.step(&[0.0; 6]).unwrap();
    assert!((&sim.state().phi - &settled.phi).amax() <= 1e-6);
}

#[test]
fn lifted_grasp_tracks_prescribed_path() {
    let ctx = context(SimConfig::default());
    let mut sim = Simulator::corner_grasp(ctx.clone());
    let start = sim.grasp().positions;
    let up: Control = [0.0, 0.0, 0.004, 0.0, 0.0, 0.004];
    for j in 1..=40 {
        sim.step(&up).unwrap();
        for (g, &k) in sim.grasp().nodes.iter().enumerate() {
            let want = start[g] + Vector3::new(0.0, 0.0, 0.004 * j as f64);
            assert!((node_position(&sim.state().phi, k) - want).amax() <= 1e-6);
        }
    }
    // the far edge still rests on the table
    let n = ctx.mesh.num_nodes();
    let far = ctx.mesh.node(8, 3);
    assert!(sim.state().phi[2 * n + far] < 0.01);
}

#[test]
fn rollout_bookkeeping_and_replay() {
    let ctx = context(SimConfig::default());
    let controls = parabola_controls(&ctx.mesh, 60, 25);
    let mut a = Simulator::corner_grasp(ctx.clone());
    let traj = a.rollout(&controls).unwrap();
    assert_eq!(traj.len(), controls.len() + 1);
    let mut b = Simulator::corner_grasp(ctx.clone());
    let again = b.rollout(&controls).unwrap();
    for (x, y) in traj.iter().zip(&again) {
        assert_eq!(x.phi.as_slice(), y.phi.as_slice());
        assert_eq!(x.phi_dot.as_slice(), y.phi_dot.as_slice());
    }
    a.reset();
    assert_eq!(a.state(), &traj[0]);
    assert!(matches!(a.rollout(&[]), Err(RolloutError { source: SimError::EmptyControls, .. })));
}

#[test]
fn still_rollout_keeps_state() {
    let ctx = context(SimConfig::default());
    let mut sim = Simulator::corner_grasp(ctx);
    let traj = sim.rollout(&vec![[0.0; 6]; 10]).unwrap();
    for s in &traj[1..] {
        assert!((&s.phi - &traj[0].phi).amax() <= 1e-6);
    }
}

#[test]
fn fold_keeps_constraints() {
    let ctx = context(SimConfig::default());
    let mut sim = Simulator::corner_grasp(ctx.clone());
    let controls = parabola_controls(&ctx.mesh, 100, 150);
    for u in &controls {
        sim.step(u).unwrap();
        let r = ctx.constraint_report(&sim.state().phi, sim.grasp());
        assert!(r.max_length_residual <= 1e-6, "{r:?}");
        assert!(r.min_contact >= -1e-6, "{r:?}");
        assert!(r.max_edge_strain <= 0.01, "{r:?}");
        assert!(r.max_grasp_error <= 1e-6, "{r:?}");
    }
    // the grasped corner ends on the far side and most nodes sit low
    let n = ctx.mesh.num_nodes();
    let corner = node_position(&sim.state().phi, ctx.mesh.node(0, 0));
    assert!((corner.x - ctx.mesh.width).abs() < 1e-6);
    let max_z = sim.state().phi.rows(2 * n, n).max();
    assert!(max_z < 0.05, "max z {max_z}");
}

/// Checked over the swing before any contact or shear limit changes activity.
#[test]
fn hanging_cloth_dissipates_energy() {
    let ctx = context(SimConfig::default());
    let state = ClothState::at_rest(ctx.mesh.flat_state(1.0));
    let grasp = GraspSpec::corner(&ctx.mesh, &state.phi);
    let mut sim = Simulator::new(ctx.clone(), state, grasp).unwrap();
    let mut energy = ctx.mechanical_energy(sim.state());
    for _ in 0..100 {
        sim.step(&[0.0; 6]).unwrap();
        let e = ctx.mechanical_energy(sim.state());
        assert!(e <= energy + 1e-9, "{e} > {energy}");
        energy = e;
    }
}

#[test]
fn adjacency_is_checked() {
    let mesh = desk_mesh();
    let p = [Vector3::zeros(), Vector3::zeros()];
    assert!(GraspSpec::adjacent(&mesh, [0, 1], p).is_ok());
    assert!(GraspSpec::adjacent(&mesh, [0, 7], p).is_ok());
    assert!(GraspSpec::adjacent(&mesh, [0, 2], p).is_err());
    // interior edge
    assert!(GraspSpec::adjacent(&mesh, [8, 9], p).is_err());
    assert!(GraspSpec::bimanual(&mesh, [0, 6], p).is_ok());
    assert!(GraspSpec::bimanual(&mesh, [3, 3], p).is_err());
}

#[test]
fn config_rejects_bad_values() {
    assert!(SimConfig { dt: 0.0, ..SimConfig::default() }.validate().is_err());
    assert!(SimConfig { max_outer: 0, ..SimConfig::default() }.validate().is_err());
    assert!(SimConfig::default().validate().is_ok());
}
