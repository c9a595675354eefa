use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cloth::{ClothMesh, ClothParams};
use crate::experiments::{generate_training_data, DataConfig};
use crate::koopman::{FitOptions, KernelSpec, KoopmanModel};
use crate::sim::{SimConfig, SimContext, Simulator};
use crate::Control;

/// Hand-built model with `m` lifted dims on a single node (3 state coordinates).
fn toy_model(m: usize, seed: u64) -> KoopmanModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
    let mut a = rand(m, m, 0.5);
    for i in 0..m {
        a[(i, i)] += 0.6;
    }
    KoopmanModel {
        landmarks: rand(3, m, 1.0),
        kernel: KernelSpec::gaussian(1.0, 1e-8).unwrap(),
        lift_matrix: DMatrix::identity(m, m),
        a_matrix: a,
        b_matrix: rand(m, 6, 2.0),
        recon_matrix: rand(3, m, 1.0),
        mean: DVector::zeros(3),
        gamma: 1e-6,
        lambda_rec: 1e-6,
        seed,
        n_train: m,
    }
}

fn loose_config(horizon: usize) -> OcpConfig {
    OcpConfig {
        horizon,
        r_weight: 0.5,
        constraints: ControlConstraintSet { y_min: -10.0, h_min: -10.0, s: 0.05, w: [-0.1; 6], v: [0.1; 6] },
        ..OcpConfig::default()
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Lifted cost summed over explicitly unrolled dynamics with full six-dimensional controls.
fn unrolled_cost(model: &KoopmanModel, cfg: &OcpConfig, z0: &DVector<f64>, zr: &DVector<f64>, plan: &[Control]) -> f64 {
    let q = model.recon_matrix.tr_mul(&model.recon_matrix) * cfg.q_prime;
    let mut z = z0.clone();
    let mut total = 0.0;
    for (t, du) in plan.iter().enumerate() {
        let e = &z - zr;
        let w = if t == cfg.horizon { cfg.terminal_weight } else { 1.0 };
        let u = DVector::from_row_slice(du);
        total += w * e.dot(&(&q * &e)) + cfg.r_weight * u.norm_squared();
        z = &model.a_matrix * &z + &model.b_matrix * &u;
    }
    total
}

#[test]
fn condensed_cost_matches_unrolled_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (m, horizon, terminal) in [(2, 2, 1.0), (2, 2, 3.0), (3, 5, 1.0), (4, 1, 0.5)] {
        let model = toy_model(m, 3 + m as u64);
        let cfg = OcpConfig { terminal_weight: terminal, ..loose_config(horizon) };
        let condensed = CondensedOcp::new(&model, &cfg).unwrap();
        let history = ControlHistory { prev: [0.0; 6], prev2: [0.0; 6] };
        for _ in 0..5 {
            let (z0, zr) = (random_vec(&mut rng, m, 1.0), random_vec(&mut rng, m, 1.0));
            let ocp = condensed.instance(z0.clone(), zr.clone(), &history);
            let x = random_vec(&mut rng, condensed.num_vars(), 0.3);
            let condensed_value = ocp.problem.objective(&x) + ocp.constant;
            let direct = unrolled_cost(&model, &cfg, &z0, &zr, &expand_plan(&x));
            assert_relative_eq!(condensed_value, direct, max_relative = 1e-8);
        }
    }
}

#[test]
fn condensed_hessian_matches_second_differences() {
    let model = toy_model(2, 5);
    let cfg = loose_config(2);
    let condensed = CondensedOcp::new(&model, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (z0, zr) = (random_vec(&mut rng, 2, 1.0), random_vec(&mut rng, 2, 1.0));
    let ocp = condensed.instance(z0.clone(), zr.clone(), &ControlHistory { prev: [0.0; 6], prev2: [0.0; 6] });
    let n = condensed.num_vars();
    let cost = |x: &DVector<f64>| unrolled_cost(&model, &cfg, &z0, &zr, &expand_plan(x));
    let unit = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let zero = DVector::zeros(n);
    let p = match &ocp.problem.hessian {
        crate::qp::Hessian::Dense(p) => p.clone(),
        crate::qp::Hessian::Diagonal(d) => DMatrix::from_diagonal(d),
    };
    for i in 0..n {
        // Linear term: J(e_i) − J(−e_i) = −2 f_i.
        let slope = (cost(&unit(i)) - cost(&-unit(i))) / 2.0;
        assert_relative_eq!(-ocp.problem.linear[i], slope, epsilon = 1e-8 * (1.0 + slope.abs()));
        for j in 0..n {
            let want = cost(&(unit(i) + unit(j))) - cost(&unit(i)) - cost(&unit(j)) + cost(&zero);
            assert_relative_eq!(p[(i, j)], want, epsilon = 1e-8 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn at_rest_optimum_is_zero() {
    let model = toy_model(2, 7);
    let cfg = OcpConfig { horizon: 1, ..loose_config(1) };
    let z = DVector::from_vec(vec![0.0, 0.0]);
    let ocp = CondensedOcp::new(&model, &cfg).unwrap().instance(z.clone(), z, &ControlHistory {
        prev: [0.0; 6],
        prev2: [0.0; 6],
    });
    let sol = solve_ocp(&ocp, &cfg, &[], 0).unwrap();
    assert!(sol.x.amax() <= 1e-12, "plan {:?}", sol.x);
    assert!(sol.cost.abs() <= 1e-12);
}

#[test]
fn tight_box_binds_for_any_target() {
    let model = toy_model(3, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = loose_config(6);
    cfg.constraints.w = [-1e-6; 6];
    cfg.constraints.v = [1e-6; 6];
    let condensed = CondensedOcp::new(&model, &cfg).unwrap();
    let history = ControlHistory { prev: [0.0; 6], prev2: [0.0; 6] };
    for _ in 0..5 {
        let ocp = condensed.instance(random_vec(&mut rng, 3, 1.0), random_vec(&mut rng, 3, 5.0), &history);
        let sol = solve_ocp(&ocp, &cfg, &[], 0).unwrap();
        let worst = sol.plan.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-6 + 1e-12, "box exceeded: {worst}");
    }
}

#[test]
fn relaxing_smoothness_never_raises_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..8 {
        let model = toy_model(3, 30 + trial);
        let mut cfg = loose_config(5);
        cfg.constraints.s = rng.gen_range(0.002..0.02);
        let relaxed = OcpConfig { constraints: ControlConstraintSet { s: 2.0 * cfg.constraints.s, ..cfg.constraints }, ..cfg };
        let (z0, zr) = (random_vec(&mut rng, 3, 1.0), random_vec(&mut rng, 3, 3.0));
        let d: Control = std::array::from_fn(|i| if i < 3 { rng.gen_range(-0.01..0.01) } else { 0.0 });
        let d = [d[0], d[1], d[2], d[0], d[1], d[2]];
        let history = ControlHistory { prev: d, prev2: [0.0; 6] };
        let tight = solve_ocp(&CondensedOcp::new(&model, &cfg).unwrap().instance(z0.clone(), zr.clone(), &history), &cfg, &[], 0)
            .unwrap();
        let loose = solve_ocp(&CondensedOcp::new(&model, &relaxed).unwrap().instance(z0, zr, &history), &relaxed, &[], 0)
            .unwrap();
        assert!(loose.cost <= tight.cost + 1e-9 * (1.0 + tight.cost.abs()), "{} > {}", loose.cost, tight.cost);
    }
}

#[test]
fn solved_plans_satisfy_every_constraint_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = toy_model(3, 12);
    let mut cfg = loose_config(8);
    cfg.constraints = ControlConstraintSet { y_min: 0.0, h_min: 0.0, s: 0.004, w: [-0.02; 6], v: [0.02; 6] };
    let condensed = CondensedOcp::new(&model, &cfg).unwrap();
    for _ in 0..6 {
        // Start on the floors with some prior velocity, so every family can bind.
        let prev = [0.1, 0.0, 0.0, 0.1, 0.02, 0.0];
        let prev2 = [0.095, 0.001, 0.002, 0.095, 0.021, 0.002];
        let history = ControlHistory { prev, prev2 };
        let ocp = condensed.instance(random_vec(&mut rng, 3, 1.0), random_vec(&mut rng, 3, 4.0), &history);
        let sol = solve_ocp(&ocp, &cfg, &[], 0).unwrap();
        for du in &sol.plan {
            assert_eq!(du[..3], du[3..], "halves differ");
        }
        let check = check_controls(&sol.plan, &history, &cfg.constraints);
        assert!(check.max() <= 1e-9, "{check:?}");
    }
}

#[test]
fn check_controls_reports_each_family() {
    let set = ControlConstraintSet { y_min: 0.0, h_min: 0.0, s: 0.01, w: [-0.05; 6], v: [0.05; 6] };
    let history = ControlHistory { prev: [0.0; 6], prev2: [0.0; 6] };
    let ok = [[0.005, 0.005, 0.005, 0.005, 0.005, 0.005]];
    assert_eq!(check_controls(&ok, &history, &set).max(), 0.0);
    let floor = check_controls(&[[0.0, -0.004, 0.0, 0.0, -0.004, 0.0]], &history, &set);
    assert_relative_eq!(floor.floor, 0.004);
    let jump = check_controls(&[[0.03, 0.0, 0.0, 0.03, 0.0, 0.0]], &history, &set);
    assert_relative_eq!(jump.smoothness, 0.02);
    let uneven = check_controls(&[[0.001, 0.0, 0.0, 0.0, 0.0, 0.0]], &history, &set);
    assert_relative_eq!(uneven.equal_displacement, 0.001);
    let ramp: Vec<Control> = (1..=8).map(|k| [0.01 * k as f64; 6]).collect();
    assert_relative_eq!(check_controls(&ramp, &history, &set).bounds, 0.03, epsilon = 1e-12);
}

#[test]
fn history_tracks_absolute_positions() {
    let mut h = ControlHistory { prev: [1.0; 6], prev2: [1.0; 6] };
    h.push(&[0.5; 6]);
    assert_eq!(h.prev, [1.5; 6]);
    assert_eq!(h.last_displacement(), [0.5; 6]);
}

#[test]
fn invalid_configurations_are_rejected() {
    let model = toy_model(2, 1);
    let base = loose_config(3);
    let mut bad = vec![
        OcpConfig { horizon: 0, ..base },
        OcpConfig { q_prime: -1.0, ..base },
        OcpConfig { r_weight: 0.0, ..base },
        OcpConfig { qp_max_iter: 0, ..base },
    ];
    for edit in [
        |c: &mut ControlConstraintSet| c.s = 0.0,
        |c: &mut ControlConstraintSet| c.w[2] = 0.01,
        |c: &mut ControlConstraintSet| c.v[4] = -0.2,
        |c: &mut ControlConstraintSet| c.y_min = f64::NAN,
    ] {
        let mut cfg = base;
        edit(&mut cfg.constraints);
        bad.push(cfg);
    }
    for cfg in bad {
        assert!(matches!(CondensedOcp::new(&model, &cfg), Err(MpcError::InvalidConfig(_))), "{cfg:?}");
    }
    let phi = DVector::zeros(4);
    let history = ControlHistory { prev: [0.0; 6], prev2: [0.0; 6] };
    assert!(matches!(
        build_ocp(&model, &phi, &DVector::zeros(3), &history, &base),
        Err(MpcError::Dimension { got: 4, want: 3 })
    ));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = OcpConfig::default();
    let text = toml::to_string(&cfg).unwrap();
    assert!(text.contains("s_m"));
    let back: OcpConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

fn small_context() -> Arc<SimContext> {
    let mesh = ClothMesh::new(5, 4, 0.3, 0.2).unwrap();
    Arc::new(SimContext::new(mesh, ClothParams::default(), SimConfig::default()).unwrap())
}

fn small_model(ctx: &Arc<SimContext>) -> KoopmanModel {
    let (data, _) = generate_training_data(ctx, &DataConfig { n_traj: 4, ..DataConfig::default() }, 5).unwrap();
    KoopmanModel::fit_with(&data, &FitOptions { landmarks: 40, ..FitOptions::default() }).unwrap()
}

#[test]
fn closed_loop_contract_and_stationary_target() {
    let ctx = small_context();
    let model = small_model(&ctx);
    let mut reference = Simulator::corner_grasp(ctx.clone());
    reference.settle(10).unwrap();
    let target = reference.state().phi.clone();

    let mut sim = Simulator::corner_grasp(ctx.clone());
    let cfg = OcpConfig { horizon: 10, constraints: ControlConstraintSet::default().anchored(sim.grasp()), ..OcpConfig::default() };
    let res = mpc_loop(&mut sim, &model, &target, &cfg, 12, 10).unwrap();
    assert!(res.completed());
    assert_eq!(res.executed_controls.len(), 12);
    assert_eq!(res.state_trajectory.len(), 13);
    for (du, plan) in res.executed_controls.iter().zip(&res.planned_sequences) {
        assert_eq!(*du, plan[0]);
        assert_eq!(plan.len(), cfg.horizon + 1);
        assert!(du.iter().all(|v| v.abs() <= 1e-4), "moved {du:?}");
    }
    assert!(check_controls(&res.executed_controls, &res.initial_history, &cfg.constraints).max() <= 1e-6);
}

#[test]
fn closed_loop_is_deterministic_and_compliant() {
    let ctx = small_context();
    let model = small_model(&ctx);
    let mut folded = Simulator::corner_grasp(ctx.clone());
    let n = ctx.mesh.num_nodes();
    let mut target = folded.state().phi.clone();
    for k in 0..n {
        // Mirror the cloth about x = W/2 and stack it on top: a crude half fold.
        let x = target[k];
        if x > 0.5 * ctx.mesh.width {
            continue;
        }
        target[k] = ctx.mesh.width - x;
        target[2 * n + k] += 0.004;
    }
    let cfg = OcpConfig { horizon: 15, constraints: ControlConstraintSet::default().anchored(folded.grasp()), ..OcpConfig::default() };
    let a = mpc_loop(&mut folded, &model, &target, &cfg, 20, 5).unwrap();
    let mut again = Simulator::corner_grasp(ctx.clone());
    let b = mpc_loop(&mut again, &model, &target, &cfg, 20, 5).unwrap();
    assert!(a.completed());
    assert_eq!(a.executed_controls, b.executed_controls);
    assert_eq!(a.state_trajectory, b.state_trajectory);
    let check = check_controls(&a.executed_controls, &a.initial_history, &cfg.constraints);
    assert!(check.max() <= 1e-6, "{check:?}");
    assert!(a.executed_controls.iter().any(|du| du.iter().any(|v| v.abs() > 1e-5)), "controller never moved");
}
