//! Convex QP solvers for `min ½qᵀPq − qᵀf  s.t.  A_eq q = b_eq,  A_in q ≥ b_in`.
//!
//! Two engines share the problem and solution types:
//!
//! - a dense dual active-set method (Goldfarb–Idnani) for general positive
//!   definite `P`, used by the controller;
//! - a working-set method on the Schur complement `A P⁻¹ Aᵀ` for diagonal `P`
//!   with sparse rows, used by the simulator's projection step. It falls back
//!   to the dense method if the working set fails to settle.
//!
//! Multipliers follow the sign convention
//! `P q − f + A_eqᵀ λ − A_inᵀ μ = 0`, `μ ≥ 0`.

mod dual;
mod kkt;
mod schur;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

pub use kkt::{verify_kkt, KktReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric positive definite")]
    NotPositiveDefinite,
}

/// Quadratic term of the objective.
#[derive(Clone, Debug, PartialEq)]
pub enum Hessian {
    Dense(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(p) => p.nrows(),
            Hessian::Diagonal(d) => d.len(),
        }
    }

    pub fn mul(&self, q: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Dense(p) => p * q,
            Hessian::Diagonal(d) => d.component_mul(q),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(p) => p.clone(),
            Hessian::Diagonal(d) => DMatrix::from_diagonal(d),
        }
    }

    fn scaled(&self, c: f64) -> Hessian {
        match self {
            Hessian::Dense(p) => Hessian::Dense(p * c),
            Hessian::Diagonal(d) => Hessian::Diagonal(d * c),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: Hessian,
    pub linear: DVector<f64>,
    pub eq_matrix: CsrMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: CsrMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add rows with [`with_equalities`](Self::with_equalities)
    /// and [`with_inequalities`](Self::with_inequalities).
    pub fn new(hessian: Hessian, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: CsrMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: CsrMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, matrix: CsrMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(mut self, matrix: CsrMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        self
    }

    /// Convenience constructor from dense blocks (zeros are dropped from the rows).
    pub fn dense(
        p: DMatrix<f64>,
        f: DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: &DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Self {
        Self::new(Hessian::Dense(p), f)
            .with_equalities(sparse_rows(a_eq), b_eq)
            .with_inequalities(sparse_rows(a_in), b_in)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let dim = |msg: String| Err(QpError::Dimension(msg));
        if self.hessian.dim() != n {
            return dim(format!("hessian is {0}x{0}, linear term has {n}", self.hessian.dim()));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return dim("equality block".into());
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return dim("inequality block".into());
        }
        if let Hessian::Dense(p) = &self.hessian {
            let scale = p.amax().max(1.0);
            if (p - p.transpose()).amax() > 1e-10 * scale {
                return Err(QpError::NotPositiveDefinite);
            }
        }
        Ok(())
    }

    pub fn objective(&self, q: &DVector<f64>) -> f64 {
        0.5 * q.dot(&self.hessian.mul(q)) - q.dot(&self.linear)
    }

    /// Same problem with `(P, f)` scaled by `c`.
    pub fn scaled_objective(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.hessian = self.hessian.scaled(c);
        out.linear = &self.linear * c;
        out
    }
}

/// Dense matrix to CSR, skipping exact zeros.
pub fn sparse_rows(a: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if a[(i, j)] != 0.0 {
                coo.push(i, j, a[(i, j)]);
            }
        }
    }
    CsrMatrix::from(&coo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub q: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub status: QpStatus,
    /// Inequality rows in the final active set, in activation order.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// Equality rows skipped as linearly dependent (and consistent).
    pub dropped_equalities: Vec<usize>,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Feasibility and optimality tolerance.
    pub tol: f64,
    /// Cap on inequality working-set changes.
    pub max_iter: usize,
    /// Relative pivot below which a constraint is treated as linearly dependent.
    pub pivot_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, pivot_tol: 1e-12 }
    }
}

/// One-shot solve with default pivoting.
pub fn solve(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    let opts = SolverOptions { tol, max_iter, ..SolverOptions::default() };
    solve_with(problem, &opts, &[])
}

/// Solve with an optional warm-start hint (inequality rows expected to be active).
pub fn solve_with(problem: &QpProblem, opts: &SolverOptions, hint: &[usize]) -> Result<QpSolution, QpError> {
    problem.validate()?;
    match &problem.hessian {
        Hessian::Diagonal(_) => schur::solve(problem, opts, hint),
        Hessian::Dense(_) => dual::solve(problem, opts, hint),
    }
}

/// Dense dual active-set solve regardless of the hessian representation.
pub fn solve_dense(problem: &QpProblem, opts: &SolverOptions, hint: &[usize]) -> Result<QpSolution, QpError> {
    problem.validate()?;
    dual::solve(problem, opts, hint)
}

/// Solver that remembers the last active set and uses it as the next warm start.
///
/// Single-owner: distinct instances may run on different threads.
#[derive(Clone, Debug, Default)]
pub struct ActiveSetSolver {
    pub options: SolverOptions,
    warm: Vec<usize>,
}

impl ActiveSetSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options, warm: Vec::new() }
    }

    pub fn warm_start(&self) -> &[usize] {
        &self.warm
    }

    pub fn set_warm_start(&mut self, rows: Vec<usize>) {
        self.warm = rows;
    }

    pub fn clear(&mut self) {
        self.warm.clear();
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        let m = problem.ineq_rhs.len();
        let hint: Vec<usize> = self.warm.iter().copied().filter(|&i| i < m).collect();
        let sol = solve_with(problem, &self.options, &hint)?;
        if sol.is_solved() {
            self.warm = sol.active_set.clone();
        }
        Ok(sol)
    }
}

pub(crate) fn row_dot(a: &CsrMatrix<f64>, i: usize, x: &DVector<f64>) -> f64 {
    let row = a.row(i);
    row.col_indices().iter().zip(row.values()).map(|(&j, &v)| v * x[j]).sum()
}

/// `out += c · Aᵀ y`.
pub(crate) fn add_transpose_product(out: &mut DVector<f64>, a: &CsrMatrix<f64>, y: &DVector<f64>, c: f64) {
    for (i, row) in a.row_iter().enumerate() {
        let w = c * y[i];
        if w != 0.0 {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                out[j] += w * v;
            }
        }
    }
}

#[cfg(test)]
mod tests;
