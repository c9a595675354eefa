//! Goldfarb–Idnani dual active-set method.
//!
//! Keeps `J = L⁻ᵀ Q` and the upper-triangular `R` with `Jᵀ N_active = [R; 0]`,
//! updated by Givens rotations as constraints enter and leave.

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{row_dot, Hessian, QpError, QpProblem, QpSolution, QpStatus, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Row {
    Eq(usize),
    Ineq(usize),
}

#[derive(Clone, Copy, Debug)]
struct ActiveRow {
    row: Row,
    sign: f64,
}

enum AddOutcome {
    Added,
    Redundant,
    Infeasible,
}

struct State<'a> {
    problem: &'a QpProblem,
    opts: &'a SolverOptions,
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    x: DVector<f64>,
    active: Vec<ActiveRow>,
    u: Vec<f64>,
    changes: usize,
}

pub(super) fn solve(problem: &QpProblem, opts: &SolverOptions, hint: &[usize]) -> Result<QpSolution, QpError> {
    let n = problem.dim();
    let (j, x) = initial_factor(problem)?;
    let mut st = State {
        problem,
        opts,
        n,
        j,
        r: DMatrix::zeros(n, n),
        x,
        active: Vec::new(),
        u: Vec::new(),
        changes: 0,
    };

    let m_eq = problem.eq_rhs.len();
    let m_in = problem.ineq_rhs.len();
    let mut dropped = Vec::new();

    for i in 0..m_eq {
        let s = row_dot(&problem.eq_matrix, i, &st.x) - problem.eq_rhs[i];
        let sign = if s > 0.0 { -1.0 } else { 1.0 };
        match st.add(ActiveRow { row: Row::Eq(i), sign }) {
            AddOutcome::Added => {}
            AddOutcome::Redundant => {
                warn!("equality row {i} is linearly dependent; dropped");
                dropped.push(i);
            }
            AddOutcome::Infeasible => return Ok(st.finish(QpStatus::Infeasible, dropped)),
        }
    }
    st.changes = 0;

    let mut is_active = vec![false; m_in];
    loop {
        let slack = |i: usize, x: &DVector<f64>| row_dot(&problem.ineq_matrix, i, x) - problem.ineq_rhs[i];
        let pick = |candidates: &mut dyn Iterator<Item = usize>, x: &DVector<f64>| {
            let mut best: Option<(usize, f64)> = None;
            for i in candidates {
                if is_active[i] {
                    continue;
                }
                let s = slack(i, x);
                if s < -opts.tol && best.map_or(true, |(_, b)| s < b) {
                    best = Some((i, s));
                }
            }
            best.map(|(i, _)| i)
        };
        let mut hinted = hint.iter().copied();
        let p = match pick(&mut hinted, &st.x) {
            Some(p) => p,
            None => match pick(&mut (0..m_in), &st.x) {
                Some(p) => p,
                None => return Ok(st.finish(QpStatus::Solved, dropped)),
            },
        };
        if st.changes >= opts.max_iter {
            return Ok(st.finish(QpStatus::MaxIterations, dropped));
        }
        match st.add(ActiveRow { row: Row::Ineq(p), sign: 1.0 }) {
            AddOutcome::Added => {}
            AddOutcome::Redundant | AddOutcome::Infeasible => {
                return Ok(st.finish(QpStatus::Infeasible, dropped));
            }
        }
        is_active.iter_mut().for_each(|a| *a = false);
        for a in &st.active {
            if let Row::Ineq(i) = a.row {
                is_active[i] = true;
            }
        }
    }
}

/// `J = L⁻ᵀ` for `P = L Lᵀ` and the unconstrained minimizer `P⁻¹ f`.
fn initial_factor(problem: &QpProblem) -> Result<(DMatrix<f64>, DVector<f64>), QpError> {
    match &problem.hessian {
        Hessian::Diagonal(d) => {
            if d.iter().any(|v| !(*v > 0.0)) {
                return Err(QpError::NotPositiveDefinite);
            }
            let j = DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt()));
            let x = problem.linear.component_div(d);
            Ok((j, x))
        }
        Hessian::Dense(p) => {
            let chol = p.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
            let n = p.nrows();
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or(QpError::NotPositiveDefinite)?;
            let x = chol.solve(&problem.linear);
            Ok((l_inv.transpose(), x))
        }
    }
}

impl State<'_> {
    fn normal_dot_columns(&self, a: ActiveRow) -> DVector<f64> {
        let (mat, i) = match a.row {
            Row::Eq(i) => (&self.problem.eq_matrix, i),
            Row::Ineq(i) => (&self.problem.ineq_matrix, i),
        };
        let row = mat.row(i);
        let n = self.n;
        let data = self.j.as_slice();
        let mut d = DVector::zeros(n);
        for (l, dl) in d.iter_mut().enumerate() {
            let col = &data[l * n..(l + 1) * n];
            let mut acc = 0.0;
            for (&k, &v) in row.col_indices().iter().zip(row.values()) {
                acc += col[k] * v;
            }
            *dl = a.sign * acc;
        }
        d
    }

    fn slack(&self, a: ActiveRow) -> f64 {
        let s = match a.row {
            Row::Eq(i) => row_dot(&self.problem.eq_matrix, i, &self.x) - self.problem.eq_rhs[i],
            Row::Ineq(i) => row_dot(&self.problem.ineq_matrix, i, &self.x) - self.problem.ineq_rhs[i],
        };
        a.sign * s
    }

    fn add(&mut self, cand: ActiveRow) -> AddOutcome {
        let n = self.n;
        let mut u_plus = 0.0;
        loop {
            let q = self.active.len();
            let s = self.slack(cand);
            let mut d = self.normal_dot_columns(cand);
            let d2sq: f64 = d.rows(q, n - q).norm_squared();
            let dsq = d.norm_squared();
            let dependent = q == n || d2sq <= self.opts.pivot_tol * self.opts.pivot_tol * dsq;

            if dependent && matches!(cand.row, Row::Eq(_)) && s.abs() <= self.opts.tol && u_plus == 0.0 {
                return AddOutcome::Redundant;
            }

            // dual step direction r = R⁻¹ d₁
            let mut r = vec![0.0; q];
            for i in (0..q).rev() {
                let mut acc = d[i];
                for (k, rk) in r.iter().enumerate().skip(i + 1) {
                    acc -= self.r[(i, k)] * rk;
                }
                r[i] = acc / self.r[(i, i)];
            }

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (i, a) in self.active.iter().enumerate() {
                if matches!(a.row, Row::Ineq(_)) && r[i] > 0.0 {
                    let ratio = self.u[i] / r[i];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(i);
                    }
                }
            }
            let t2 = if dependent { f64::INFINITY } else { (-s / d2sq).max(0.0) };

            if t1.is_infinite() && t2.is_infinite() {
                return AddOutcome::Infeasible;
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                // primal step along z = J₂ d₂
                let data = self.j.as_slice();
                for l in q..n {
                    let coef = t * d[l];
                    if coef != 0.0 {
                        let col = &data[l * n..(l + 1) * n];
                        for (xk, ck) in self.x.iter_mut().zip(col) {
                            *xk += coef * ck;
                        }
                    }
                }
            }
            for (ui, ri) in self.u.iter_mut().zip(&r) {
                *ui -= t * ri;
            }
            u_plus += t;

            if t2 <= t1 {
                self.rotate_in(&mut d, q);
                for i in 0..=q {
                    self.r[(i, q)] = d[i];
                }
                self.active.push(cand);
                self.u.push(u_plus);
                self.changes += 1;
                return AddOutcome::Added;
            }
            let k = drop_at.expect("finite partial step has a blocking constraint");
            self.drop_active(k);
        }
    }

    /// Rotate `d[q+1..]` into `d[q]`, applying the same rotations to the columns of `J`.
    fn rotate_in(&mut self, d: &mut DVector<f64>, q: usize) {
        let n = self.n;
        for l in (q + 1..n).rev() {
            let (a, b) = (d[l - 1], d[l]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[l - 1] = h;
            d[l] = 0.0;
            rotate_columns(&mut self.j, l - 1, l, c, s);
        }
    }

    fn drop_active(&mut self, k: usize) {
        let q = self.active.len();
        self.active.remove(k);
        self.u.remove(k);
        for c in k..q - 1 {
            for i in 0..=c + 1 {
                self.r[(i, c)] = self.r[(i, c + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for c in k..q - 1 {
            let (a, b) = (self.r[(c, c)], self.r[(c + 1, c)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (cs, sn) = (a / h, b / h);
            for col in c..q - 1 {
                let (y1, y2) = (self.r[(c, col)], self.r[(c + 1, col)]);
                self.r[(c, col)] = cs * y1 + sn * y2;
                self.r[(c + 1, col)] = -sn * y1 + cs * y2;
            }
            self.r[(c + 1, c)] = 0.0;
            rotate_columns(&mut self.j, c, c + 1, cs, sn);
        }
        self.changes += 1;
    }

    fn finish(self, status: QpStatus, dropped: Vec<usize>) -> QpSolution {
        let mut eq_mult = DVector::zeros(self.problem.eq_rhs.len());
        let mut in_mult = DVector::zeros(self.problem.ineq_rhs.len());
        let mut active_set = Vec::new();
        for (a, &u) in self.active.iter().zip(&self.u) {
            match a.row {
                Row::Eq(i) => eq_mult[i] = -a.sign * u,
                Row::Ineq(i) => {
                    in_mult[i] = u;
                    active_set.push(i);
                }
            }
        }
        QpSolution {
            q: self.x,
            eq_multipliers: eq_mult,
            ineq_multipliers: in_mult,
            status,
            active_set,
            iterations: self.changes,
            dropped_equalities: dropped,
        }
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    let n = m.nrows();
    let data = m.as_mut_slice();
    let (left, right) = data.split_at_mut(b * n);
    let ca = &mut left[a * n..(a + 1) * n];
    let cb = &mut right[..n];
    for (ya, yb) in ca.iter_mut().zip(cb.iter_mut()) {
        let (y1, y2) = (*ya, *yb);
        *ya = c * y1 + s * y2;
        *yb = -s * y1 + c * y2;
    }
}
