use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn empty(n: usize) -> DMatrix<f64> {
    DMatrix::zeros(0, n)
}

fn equality_example() -> QpProblem {
    QpProblem::dense(
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![1.0, 0.0]),
        &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_vec(vec![0.0]),
        &empty(2),
        DVector::zeros(0),
    )
}

#[test]
fn unconstrained_scalar() {
    let p = QpProblem::new(Hessian::Dense(DMatrix::identity(1, 1)), DVector::from_vec(vec![1.0]));
    let sol = solve(&p, 1e-8, 200).unwrap();
    assert!(sol.is_solved());
    assert!((sol.q[0] - 1.0).abs() < 1e-14);
}

#[test]
fn single_equality() {
    for p in [equality_example(), diagonal_copy(&equality_example())] {
        let sol = solve(&p, 1e-8, 200).unwrap();
        assert!(sol.is_solved());
        assert!((sol.q[0] - 0.5).abs() < 1e-12);
        assert!((sol.q[1] + 0.5).abs() < 1e-12);
        assert!((sol.eq_multipliers[0] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn active_lower_bound() {
    let p = QpProblem::dense(
        DMatrix::identity(1, 1),
        DVector::from_vec(vec![1.0]),
        &empty(1),
        DVector::zeros(0),
        &DMatrix::from_row_slice(1, 1, &[1.0]),
        DVector::from_vec(vec![2.0]),
    );
    for p in [p.clone(), diagonal_copy(&p)] {
        let sol = solve(&p, 1e-8, 200).unwrap();
        assert!(sol.is_solved());
        assert!((sol.q[0] - 2.0).abs() < 1e-12);
        assert!((sol.ineq_multipliers[0] - 1.0).abs() < 1e-12);
        assert_eq!(sol.active_set, vec![0]);
    }
}

fn analytic_equality_solution() -> QpSolution {
    QpSolution {
        q: DVector::from_vec(vec![0.5, -0.5]),
        eq_multipliers: DVector::from_vec(vec![0.5]),
        ineq_multipliers: DVector::zeros(0),
        status: QpStatus::Solved,
        active_set: vec![],
        iterations: 0,
        dropped_equalities: vec![],
    }
}

#[test]
fn kkt_accepts_exact_solution() {
    let r = verify_kkt(&equality_example(), &analytic_equality_solution(), 1e-12);
    assert!(r.satisfied);
    assert!(r.stationarity <= 1e-12 && r.primal_eq <= 1e-12);
}

#[test]
fn kkt_flags_perturbation() {
    let mut sol = analytic_equality_solution();
    sol.q[0] += 1e-2;
    let r = verify_kkt(&equality_example(), &sol, 1e-8);
    assert!(!r.satisfied);
    // P δ with δ = (1e-2, 0)
    assert!((r.stationarity - 1e-2).abs() < 1e-12);
}

#[test]
fn kkt_flags_negative_multiplier() {
    let p = QpProblem::dense(
        DMatrix::identity(1, 1),
        DVector::from_vec(vec![1.0]),
        &empty(1),
        DVector::zeros(0),
        &DMatrix::from_row_slice(1, 1, &[1.0]),
        DVector::from_vec(vec![1.0]),
    );
    let sol = QpSolution {
        q: DVector::from_vec(vec![1.0]),
        eq_multipliers: DVector::zeros(0),
        ineq_multipliers: DVector::from_vec(vec![-0.5]),
        status: QpStatus::Solved,
        active_set: vec![0],
        iterations: 0,
        dropped_equalities: vec![],
    };
    let r = verify_kkt(&p, &sol, 1e-8);
    assert!(!r.satisfied);
    assert!((r.dual - 0.5).abs() < 1e-15);
}

#[test]
fn redundant_equality_is_dropped() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
    let p = QpProblem::dense(
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![1.0, 0.0]),
        &a,
        DVector::from_vec(vec![0.0, 0.0]),
        &empty(2),
        DVector::zeros(0),
    );
    for p in [p.clone(), diagonal_copy(&p)] {
        let sol = solve(&p, 1e-8, 200).unwrap();
        assert!(sol.is_solved());
        assert_eq!(sol.dropped_equalities, vec![1]);
        assert!((sol.q[0] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn inconsistent_equalities_are_infeasible() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let p = QpProblem::dense(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        &a,
        DVector::from_vec(vec![0.0, 1.0]),
        &empty(2),
        DVector::zeros(0),
    );
    for p in [p.clone(), diagonal_copy(&p)] {
        assert_eq!(solve(&p, 1e-8, 200).unwrap().status, QpStatus::Infeasible);
    }
}

#[test]
fn conflicting_bounds_are_infeasible() {
    let p = QpProblem::dense(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        &empty(1),
        DVector::zeros(0),
        &DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        DVector::from_vec(vec![1.0, 0.0]),
    );
    for p in [p.clone(), diagonal_copy(&p)] {
        assert_eq!(solve(&p, 1e-8, 200).unwrap().status, QpStatus::Infeasible);
    }
}

#[test]
fn rejects_bad_dimensions() {
    let p = QpProblem::new(Hessian::Dense(DMatrix::identity(2, 2)), DVector::zeros(3));
    assert!(matches!(solve(&p, 1e-8, 10), Err(QpError::Dimension(_))));
}

#[test]
fn rejects_asymmetric_hessian() {
    let p = QpProblem::new(
        Hessian::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])),
        DVector::zeros(2),
    );
    assert_eq!(p.validate(), Err(QpError::NotPositiveDefinite));
}

fn diagonal_copy(p: &QpProblem) -> QpProblem {
    let mut out = p.clone();
    out.hessian = Hessian::Diagonal(p.hessian.to_dense().diagonal());
    out
}

/// Random strictly convex, feasible problem.
fn random_problem(rng: &mut ChaCha8Rng, diagonal: bool) -> QpProblem {
    let n = rng.gen_range(1..=6);
    let m_e = rng.gen_range(0..=2.min(n - 1));
    let m_i = rng.gen_range(0..=8);
    let hessian = if diagonal {
        Hessian::Diagonal(DVector::from_fn(n, |_, _| rng.gen_range(0.2..3.0)))
    } else {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        Hessian::Dense(b.transpose() * &b + DMatrix::identity(n, n) * 0.3)
    };
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let feasible = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(m_e, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &feasible;
    let a_in = DMatrix::from_fn(m_i, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_in = &a_in * &feasible - DVector::from_fn(m_i, |_, _| rng.gen_range(0.0..0.5));
    QpProblem::new(hessian, f)
        .with_equalities(sparse_rows(&a_eq), b_eq)
        .with_inequalities(sparse_rows(&a_in), b_in)
}

/// Enumerate every inequality subset, solve its KKT system and keep the best feasible point.
fn brute_force_objective(p: &QpProblem) -> f64 {
    let n = p.dim();
    let dense = |m: &CsrMatrix<f64>| {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (i, row) in m.row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                out[(i, j)] = v;
            }
        }
        out
    };
    let a_eq = dense(&p.eq_matrix);
    let a_in = dense(&p.ineq_matrix);
    let m_e = a_eq.nrows();
    let m_i = a_in.nrows();
    let pm = p.hessian.to_dense();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << m_i) {
        let rows: Vec<usize> = (0..m_i).filter(|i| mask & (1 << i) != 0).collect();
        let k = m_e + rows.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&pm);
        rhs.rows_mut(0, n).copy_from(&p.linear);
        for r in 0..k {
            let (row, b) = if r < m_e {
                (a_eq.row(r).clone_owned(), p.eq_rhs[r])
            } else {
                (a_in.row(rows[r - m_e]).clone_owned(), p.ineq_rhs[rows[r - m_e]])
            };
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
            rhs[n + r] = b;
        }
        let Some(x) = kkt.lu().solve(&rhs) else { continue };
        let q = x.rows(0, n).clone_owned();
        let feasible = (&a_eq * &q - &p.eq_rhs).amax() <= 1e-9
            && (&a_in * &q - &p.ineq_rhs).iter().all(|s| *s >= -1e-9);
        if feasible {
            best = best.min(p.objective(&q));
        }
    }
    best
}

#[test]
fn matches_brute_force_on_random_problems() {
    for diagonal in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(if diagonal { 11 } else { 3 });
        for case in 0..100 {
            let p = random_problem(&mut rng, diagonal);
            let oracle = brute_force_objective(&p);
            let sol = solve(&p, 1e-10, 200).unwrap();
            assert!(sol.is_solved(), "case {case}: {:?}", sol.status);
            let got = p.objective(&sol.q);
            assert!((got - oracle).abs() <= 1e-6, "case {case}: {got} vs {oracle}");
            assert!(verify_kkt(&p, &sol, 1e-8).satisfied, "case {case}");
            if diagonal {
                let dense = solve_dense(&p, &SolverOptions { tol: 1e-10, ..Default::default() }, &[]).unwrap();
                assert!((p.objective(&dense.q) - oracle).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn warm_start_reaches_same_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let diag = rng.gen_bool(0.5);
        let p = random_problem(&mut rng, diag);
        let mut solver = ActiveSetSolver::default();
        let cold = solver.solve(&p).unwrap();
        let warm = solver.solve(&p).unwrap();
        assert!((&cold.q - &warm.q).amax() < 1e-9);
        assert_eq!(solver.warm_start(), warm.active_set.as_slice());
    }
}

#[test]
fn solves_are_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let diag = rng.gen_bool(0.5);
        let p = random_problem(&mut rng, diag);
        let a = solve(&p, 1e-8, 200).unwrap();
        let b = solve(&p, 1e-8, 200).unwrap();
        assert_eq!(a.q.as_slice(), b.q.as_slice());
        assert_eq!(a.eq_multipliers.as_slice(), b.eq_multipliers.as_slice());
        assert_eq!(a.ineq_multipliers.as_slice(), b.ineq_multipliers.as_slice());
    }
}

proptest! {
    #[test]
    fn objective_scaling_scales_multipliers(seed in 0u64..1000, c in 0.1f64..10.0, diagonal in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, diagonal);
        let base = solve(&p, 1e-10, 200).unwrap();
        let scaled = solve(&p.scaled_objective(c), 1e-10, 200).unwrap();
        prop_assert!(base.is_solved() && scaled.is_solved());
        prop_assert!((&base.q - &scaled.q).amax() < 1e-7);
        prop_assert!((&base.eq_multipliers * c - &scaled.eq_multipliers).amax() < 1e-6 * c.max(1.0));
        prop_assert!((&base.ineq_multipliers * c - &scaled.ineq_multipliers).amax() < 1e-6 * c.max(1.0));
    }
}
