use nalgebra::DVector;

use super::{add_transpose_product, row_dot, QpProblem, QpSolution};

/// Infinity-norm KKT residuals of a candidate solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    pub primal_eq: f64,
    /// Largest inequality violation `max(0, b − A q)`.
    pub primal_ineq: f64,
    /// Largest negative inequality multiplier.
    pub dual: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub satisfied: bool,
}

pub fn verify_kkt(problem: &QpProblem, sol: &QpSolution, tol: f64) -> KktReport {
    let q = &sol.q;
    let primal_eq = (0..problem.eq_rhs.len())
        .map(|i| (row_dot(&problem.eq_matrix, i, q) - problem.eq_rhs[i]).abs())
        .fold(0.0, f64::max);
    let slacks: Vec<f64> = (0..problem.ineq_rhs.len())
        .map(|i| row_dot(&problem.ineq_matrix, i, q) - problem.ineq_rhs[i])
        .collect();
    let primal_ineq = slacks.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max);
    let mu = &sol.ineq_multipliers;
    let dual = mu.iter().map(|m| (-m).max(0.0)).fold(0.0, f64::max);
    let complementarity = slacks.iter().zip(mu.iter()).map(|(s, m)| (s * m).abs()).fold(0.0, f64::max);

    let mut grad: DVector<f64> = problem.hessian.mul(q) - &problem.linear;
    add_transpose_product(&mut grad, &problem.eq_matrix, &sol.eq_multipliers, 1.0);
    add_transpose_product(&mut grad, &problem.ineq_matrix, mu, -1.0);
    let stationarity = grad.amax();

    let satisfied = [primal_eq, primal_ineq, dual, stationarity, complementarity].iter().all(|v| *v <= tol);
    KktReport { primal_eq, primal_ineq, dual, stationarity, complementarity, satisfied }
}
