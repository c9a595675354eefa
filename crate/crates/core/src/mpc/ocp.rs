use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use super::{ControlConstraintSet, ControlHistory, MpcError};
use crate::koopman::KoopmanModel;
use crate::qp::{self, verify_kkt, Hessian, KktReport, QpProblem, QpStatus, SolverOptions};
use crate::Control;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: usize,
    /// State weight (m⁻²): `Q′ = q_prime · I`.
    pub q_prime: f64,
    /// Control weight (m⁻²): `R = r_weight · I`.
    pub r_weight: f64,
    /// Extra factor on the last state term; 1 keeps the sum uniform.
    pub terminal_weight: f64,
    pub constraints: ControlConstraintSet,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            q_prime: 1.0,
            r_weight: 500.0,
            terminal_weight: 1.0,
            constraints: ControlConstraintSet::default(),
            qp_tol: 1e-9,
            qp_max_iter: 5000,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: String| Err(MpcError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.q_prime >= 0.0 && self.q_prime.is_finite()) {
            return bad(format!("q_prime must be non-negative, got {}", self.q_prime));
        }
        if !(self.r_weight > 0.0 && self.r_weight.is_finite()) {
            return bad(format!("r_weight must be positive, got {}", self.r_weight));
        }
        if !(self.terminal_weight >= 0.0 && self.terminal_weight.is_finite()) {
            return bad("terminal_weight must be non-negative".into());
        }
        if !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return bad("QP tolerance and iteration cap must be positive".into());
        }
        self.constraints.validate()
    }

    fn state_weight(&self, t: usize) -> f64 {
        if t == self.horizon {
            self.terminal_weight
        } else {
            1.0
        }
    }
}

/// A condensed OCP instance.
///
/// The lifted cost equals `problem.objective(x) + constant` for the stacked
/// reduced controls `x = [v_0; …; v_T]`.
#[derive(Clone, Debug)]
pub struct Ocp {
    pub problem: QpProblem,
    pub constant: f64,
    pub z0: DVector<f64>,
    pub zr: DVector<f64>,
}

/// Model- and horizon-dependent parts of the OCP, computed once and reused every step.
#[derive(Clone, Debug)]
pub struct CondensedOcp {
    pub config: OcpConfig,
    /// `Q = 𝔠ᵀ Q′ 𝔠`, `m × m`.
    pub state_cost: DMatrix<f64>,
    /// Input matrix acting on the reduced control, `B [I; I]`.
    pub input: DMatrix<f64>,
    a: DMatrix<f64>,
    hessian: DMatrix<f64>,
    ineq_matrix: CsrMatrix<f64>,
}

/// Row layout: per step `t`, floor rows (y, z), smoothness rows (±, xyz), box rows (±, xyz).
const ROWS_PER_STEP: usize = 14;

impl CondensedOcp {
    pub fn new(model: &KoopmanModel, config: &OcpConfig) -> Result<Self, MpcError> {
        config.validate()?;
        let m = model.landmark_count();
        let t_len = config.horizon;
        let b = &model.b_matrix;
        let input = DMatrix::from_fn(m, 3, |i, a| b[(i, a)] + b[(i, a + 3)]);
        let state_cost = {
            let c = &model.recon_matrix;
            let q = c.tr_mul(c) * config.q_prime;
            (&q + q.transpose()) * 0.5
        };
        let a = model.a_matrix.clone();
        let nv = 3 * (t_len + 1);

        // Column c of ΓᵀQ̄Γ: unit input at (step j, axis), forward response then adjoint sweep.
        let at = a.transpose();
        let mut gram = DMatrix::zeros(nv, nv);
        for c in 0..3 * t_len {
            let (j, axis) = (c / 3, c % 3);
            let mut z = vec![DVector::zeros(m); t_len + 1];
            z[j + 1] = input.column(axis).into_owned();
            for t in j + 2..=t_len {
                z[t] = &a * &z[t - 1];
            }
            let mut lam = DVector::zeros(m);
            for t in (1..=t_len).rev() {
                lam = &at * &lam;
                if t > j {
                    lam += &state_cost * &z[t] * config.state_weight(t);
                }
                let col = input.tr_mul(&lam);
                let i = t - 1;
                for bax in 0..3 {
                    gram[(3 * i + bax, c)] = col[bax];
                }
            }
        }
        let mut hessian = (&gram + gram.transpose()) * 1.0;
        for i in 0..nv {
            hessian[(i, i)] += 4.0 * config.r_weight;
        }

        Ok(Self { config: *config, state_cost, input, a, hessian, ineq_matrix: constraint_rows(t_len), })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn num_vars(&self) -> usize {
        3 * (self.config.horizon + 1)
    }

    /// Lifted states `z_0 … z_T` under the reduced control stack `x`.
    pub fn rollout(&self, z0: &DVector<f64>, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.horizon() + 1);
        out.push(z0.clone());
        for t in 0..self.horizon() {
            let v = x.rows(3 * t, 3);
            let next = &self.a * &out[t] + &self.input * v;
            out.push(next);
        }
        out
    }

    /// Condensed problem at the current lifted state.
    pub fn instance(&self, z0: DVector<f64>, zr: DVector<f64>, history: &ControlHistory) -> Ocp {
        let t_len = self.horizon();
        let nv = self.num_vars();
        let free = self.rollout(&z0, &DVector::zeros(nv));
        let mut constant = 0.0;
        let mut dev = Vec::with_capacity(t_len + 1);
        for (t, z) in free.iter().enumerate() {
            let e = z - &zr;
            let w = if t == 0 { 1.0 } else { self.config.state_weight(t) };
            constant += w * e.dot(&(&self.state_cost * &e));
            dev.push(e);
        }
        let at = self.a.transpose();
        let mut linear = DVector::zeros(nv);
        let mut lam = DVector::zeros(z0.len());
        for t in (1..=t_len).rev() {
            lam = &at * &lam + &self.state_cost * &dev[t] * self.config.state_weight(t);
            let g = self.input.tr_mul(&lam);
            linear.rows_mut(3 * (t - 1), 3).copy_from(&(g * -2.0));
        }
        let problem = QpProblem::new(Hessian::Dense(self.hessian.clone()), linear)
            .with_inequalities(self.ineq_matrix.clone(), self.constraint_rhs(history));
        Ocp { problem, constant, z0, zr }
    }

    fn constraint_rhs(&self, history: &ControlHistory) -> DVector<f64> {
        let set = &self.config.constraints;
        let t_len = self.horizon();
        let (lo, hi) = set.reduced_box();
        let d = history.last_displacement();
        let u = history.prev;
        let floor_y = (set.y_min - u[1]).max(set.y_min - u[4]);
        let floor_z = (set.h_min - u[2]).max(set.h_min - u[5]);
        let mut rhs = DVector::zeros(ROWS_PER_STEP * (t_len + 1));
        for t in 0..=t_len {
            let r = ROWS_PER_STEP * t;
            rhs[r] = floor_y;
            rhs[r + 1] = floor_z;
            for a in 0..3 {
                // Step 0 is measured against the last executed displacement of both points.
                let (below, above) = if t == 0 { (d[a].max(d[a + 3]), d[a].min(d[a + 3])) } else { (0.0, 0.0) };
                rhs[r + 2 + a] = below - set.s;
                rhs[r + 5 + a] = -above - set.s;
                rhs[r + 8 + a] = lo[a];
                rhs[r + 11 + a] = -hi[a];
            }
        }
        rhs
    }
}

/// Constraint rows in the fixed layout; only the right-hand side depends on the step.
fn constraint_rows(t_len: usize) -> CsrMatrix<f64> {
    let nv = 3 * (t_len + 1);
    let mut coo = CooMatrix::new(ROWS_PER_STEP * (t_len + 1), nv);
    for t in 0..=t_len {
        let r = ROWS_PER_STEP * t;
        for j in 0..=t {
            coo.push(r, 3 * j + 1, 1.0);
            coo.push(r + 1, 3 * j + 2, 1.0);
        }
        for a in 0..3 {
            let col = 3 * t + a;
            coo.push(r + 2 + a, col, 1.0);
            coo.push(r + 5 + a, col, -1.0);
            if t > 0 {
                coo.push(r + 2 + a, col - 3, -1.0);
                coo.push(r + 5 + a, col - 3, 1.0);
            }
            coo.push(r + 8 + a, col, 1.0);
            coo.push(r + 11 + a, col, -1.0);
        }
    }
    CsrMatrix::from(&coo)
}

/// Build the OCP from scratch; prefer [`CondensedOcp`] when solving repeatedly.
pub fn build_ocp(
    model: &KoopmanModel,
    phi_now: &DVector<f64>,
    phi_target: &DVector<f64>,
    history: &ControlHistory,
    config: &OcpConfig,
) -> Result<Ocp, MpcError> {
    let want = model.state_dim();
    for phi in [phi_now, phi_target] {
        if phi.len() != want {
            return Err(MpcError::Dimension { got: phi.len(), want });
        }
    }
    let condensed = CondensedOcp::new(model, config)?;
    Ok(condensed.instance(model.lift(phi_now), model.lift(phi_target), history))
}

#[derive(Clone, Debug)]
pub struct OcpSolution {
    /// Reduced stack `[v_0; …; v_T]`.
    pub x: DVector<f64>,
    pub plan: Vec<Control>,
    /// Lifted cost including the constant part.
    pub cost: f64,
    pub iterations: usize,
    pub active_set: Vec<usize>,
    pub kkt: KktReport,
}

/// `Δu_t = [v_t; v_t]` for every step of the stack.
pub fn expand_plan(x: &DVector<f64>) -> Vec<Control> {
    x.as_slice().chunks_exact(3).map(|v| [v[0], v[1], v[2], v[0], v[1], v[2]]).collect()
}

/// Solve with an optional warm-start active set; `step` labels errors.
pub fn solve_ocp(ocp: &Ocp, config: &OcpConfig, hint: &[usize], step: usize) -> Result<OcpSolution, MpcError> {
    let opts = SolverOptions { tol: config.qp_tol, max_iter: config.qp_max_iter, ..SolverOptions::default() };
    let sol = qp::solve_with(&ocp.problem, &opts, hint).map_err(|source| MpcError::Qp { step, source })?;
    match sol.status {
        QpStatus::Solved => {}
        QpStatus::Infeasible => return Err(MpcError::Infeasible { step }),
        QpStatus::MaxIterations => return Err(MpcError::NotConverged { step, iterations: sol.iterations }),
    }
    let kkt = verify_kkt(&ocp.problem, &sol, 1e-6);
    Ok(OcpSolution {
        plan: expand_plan(&sol.q),
        cost: ocp.problem.objective(&sol.q) + ocp.constant,
        iterations: sol.iterations,
        active_set: sol.active_set,
        kkt,
        x: sol.q,
    })
}
