use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::{ClothState, GraspSpec, SimConfig, SimError};
use crate::cloth::{
    contacts_oriented, length_residuals, shear_limits, ClothMesh, ClothOperators, ClothParams, ContactKind, ContactSet, Edge,
    LengthResiduals,
};
use crate::qp::{ActiveSetSolver, Hessian, QpProblem, QpSolution, QpStatus, SolverOptions};
use crate::Control;

/// Immutable simulation context: mesh, operators, parameters and the factored
/// implicit-step matrix. Shareable across threads.
#[derive(Clone, Debug)]
pub struct SimContext {
    pub mesh: ClothMesh,
    pub ops: ClothOperators,
    pub params: ClothParams,
    pub config: SimConfig,
    lengths: Vec<Edge>,
    system: Cholesky<f64, Dyn>,
    /// Node masses `rho * area`, repeated for the three coordinate blocks.
    masses: DVector<f64>,
}

/// Relative size below which a contact normal counts as dependent on the working set.
///
/// Stacked layers produce nearly parallel rows; a tighter threshold lets them
/// in and the resulting steps are numerically meaningless.
const PIVOT_TOL: f64 = 1e-9;

/// Shortest fraction of a projection correction tried before giving up on it.
const MIN_STEP: f64 = 1.0 / 64.0;

/// Per-trajectory mutable state carried between steps.
#[derive(Clone, Debug)]
pub struct StepCache {
    /// Table reaction impulse per node from the previous step (kg·m/s).
    pub normal_impulse: DVector<f64>,
    active: Vec<ContactKind>,
    solver: ActiveSetSolver,
}

impl StepCache {
    pub fn new(ctx: &SimContext) -> Self {
        let options = SolverOptions {
            tol: ctx.config.qp_tol,
            max_iter: ctx.config.qp_max_iter,
            pivot_tol: PIVOT_TOL,
        };
        Self {
            normal_impulse: DVector::zeros(ctx.mesh.num_nodes()),
            active: Vec::new(),
            solver: ActiveSetSolver::new(options),
        }
    }
}

/// Outcome of a projection.
#[derive(Clone, Debug)]
pub struct Projection {
    pub state: ClothState,
    pub outer_iterations: usize,
    pub converged: bool,
    pub violation: f64,
}

/// Constraint residuals of a configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintReport {
    /// `max |C|` over the length constraints (m²).
    pub max_length_residual: f64,
    /// Smallest emitted contact residual (m), `+inf` if none is near activation.
    pub min_contact: f64,
    /// Largest relative deviation of a grid edge from its rest length.
    pub max_edge_strain: f64,
    /// Largest grasp position error (m).
    pub max_grasp_error: f64,
}

impl SimContext {
    pub fn new(mesh: ClothMesh, params: ClothParams, config: SimConfig) -> Result<Self, SimError> {
        params.validate()?;
        config.validate()?;
        let ops = ClothOperators::new(&mesh);
        let system = implicit_matrix(&ops, &params, config.dt);
        let system = Cholesky::new(system).ok_or(SimError::SingularSystem)?;
        let lengths = config.length_constraints.select(&mesh);
        let masses = DVector::from_fn(3 * mesh.num_nodes(), |i, _| params.rho * ops.mass[i % mesh.num_nodes()]);
        Ok(Self { mesh, ops, params, config, lengths, system, masses })
    }

    /// Flat cloth resting on the table with zero velocity.
    pub fn rest_state(&self) -> ClothState {
        ClothState::at_rest(self.mesh.flat_state(self.config.table_z))
    }

    pub fn length_constraints(&self) -> &[Edge] {
        &self.lengths
    }

    /// Unconstrained implicit-Euler prediction, reusing the factored system.
    pub fn unconstrained_step(&self, state: &ClothState) -> DVector<f64> {
        let rhs = implicit_rhs(state, &self.ops, &self.params, self.config.dt);
        let n = self.mesh.num_nodes();
        let mut phi0 = state.phi.clone();
        for d in 0..3 {
            let v = self.system.solve(&rhs.rows(d * n, n).clone_owned());
            let mut block = phi0.rows_mut(d * n, n);
            block.axpy(self.config.dt, &v, 1.0);
        }
        phi0
    }

    /// Unilateral constraints near activation: table, layers and (if enabled) shear limits.
    pub fn contacts(&self, phi: &DVector<f64>, grasp: &GraspSpec) -> ContactSet {
        self.contacts_from(phi, phi, grasp)
    }

    /// As [`contacts`](Self::contacts) with the layer order taken from `reference`.
    fn contacts_from(&self, phi: &DVector<f64>, reference: &DVector<f64>, grasp: &GraspSpec) -> ContactSet {
        let cfg = &self.config.contact;
        let set = contacts_oriented(&self.mesh, phi, reference, self.config.table_z, cfg, &grasp.nodes);
        if !self.config.shear_limit {
            return set;
        }
        let mut kinds = set.kinds;
        kinds.extend(shear_limits(&self.mesh, phi, cfg, &grasp.nodes));
        ContactSet::from_kinds(&self.mesh, kinds, phi, self.config.table_z, cfg)
    }

    /// Lengths whose endpoints are both grasped are fixed by the grasp rows.
    /// Residuals, contacts (including sticky layer pairs) and the scalar violation at `phi`.
    fn measure(
        &self,
        phi: &DVector<f64>,
        reference: &DVector<f64>,
        grasp: &GraspSpec,
        lengths: &[Edge],
        sticky: &[ContactKind],
    ) -> (LengthResiduals, [f64; 6], ContactSet, f64) {
        let c = length_residuals(lengths, phi);
        let g = grasp.residual(phi);
        let mut h = self.contacts_from(phi, reference, grasp);
        // layer pairs stay enforced for the rest of the step once detected,
        // otherwise a pair can flicker in and out of the detection radius
        let fresh: Vec<ContactKind> = sticky.iter().filter(|k| !h.kinds.contains(k)).copied().collect();
        if !fresh.is_empty() {
            let mut kinds = h.kinds;
            kinds.extend(fresh);
            h = ContactSet::from_kinds(&self.mesh, kinds, phi, self.config.table_z, &self.config.contact);
        }
        let violation = c.values.amax().max(g.iter().fold(0.0, |m, v| m.max(v.abs()))).max((-h.min_value()).max(0.0));
        (c, g, h, violation)
    }

    /// Violation of a fixed set of rows; new contacts found at `phi` are ignored.
    fn violation_on(&self, phi: &DVector<f64>, grasp: &GraspSpec, lengths: &[Edge], kinds: &[ContactKind]) -> f64 {
        let c = length_residuals(lengths, phi);
        let g = grasp.residual(phi);
        let h = ContactSet::from_kinds(&self.mesh, kinds.to_vec(), phi, self.config.table_z, &self.config.contact);
        c.values.amax().max(g.iter().fold(0.0, |m, v| m.max(v.abs()))).max((-h.min_value()).max(0.0))
    }

    fn free_lengths(&self, grasp: &GraspSpec) -> Vec<Edge> {
        self.lengths
            .iter()
            .filter(|e| !(grasp.nodes.contains(&e.a) && grasp.nodes.contains(&e.b)))
            .copied()
            .collect()
    }

    pub fn constraint_report(&self, phi: &DVector<f64>, grasp: &GraspSpec) -> ConstraintReport {
        let c = length_residuals(&self.free_lengths(grasp), phi);
        let h = self.contacts(phi, grasp);
        let n = self.mesh.num_nodes();
        let max_edge_strain = self
            .mesh
            .edges
            .iter()
            .map(|e| {
                let l = (0..3).map(|d| (phi[d * n + e.a] - phi[d * n + e.b]).powi(2)).sum::<f64>().sqrt();
                (l / e.rest_length - 1.0).abs()
            })
            .fold(0.0, f64::max);
        ConstraintReport {
            max_length_residual: c.values.amax(),
            min_contact: h.min_value(),
            max_edge_strain,
            max_grasp_error: grasp.residual(phi).iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Kinetic + bending + gravitational (virtual-mass weighted) energy.
    pub fn mechanical_energy(&self, state: &ClothState) -> f64 {
        let n = self.mesh.num_nodes();
        let p = &self.params;
        let kinetic = 0.5 * state.phi_dot.component_mul(&state.phi_dot).dot(&self.masses);
        let mut bending = 0.0;
        for d in 0..3 {
            let x = state.phi.rows(d * n, n);
            bending += 0.5 * p.kappa * x.dot(&(&self.ops.stiffness * x));
        }
        let potential = p.delta * p.gravity * self.ops.mass.dot(&state.phi.rows(2 * n, n));
        kinetic + bending + potential
    }

    /// Iterated QP projection of the prediction `phi0` onto the constraints.
    pub fn project_step(
        &self,
        phi0: &DVector<f64>,
        prev: &ClothState,
        grasp: &GraspSpec,
        cache: &mut StepCache,
    ) -> Result<Projection, SimError> {
        let dt = self.config.dt;
        let n = self.mesh.num_nodes();
        let time = prev.time + dt;

        // friction: one impulse from the predictor velocity, folded into the target
        let mut target = phi0.clone();
        if self.params.mu > 0.0 {
            let predictor = (phi0 - &prev.phi) / dt;
            let h0 = self.contacts_from(phi0, &prev.phi, grasp);
            let impulse = friction_term(&predictor, &h0, &self.masses, &cache.normal_impulse, self.params.mu);
            target += impulse.component_div(&self.masses) * dt;
        }

        let lengths = self.free_lengths(grasp);
        let hessian = Hessian::Diagonal(self.masses.clone());
        let mut phi = target.clone();
        let mut table_mu = DVector::zeros(n);
        let mut converged = false;
        let mut violation;
        let mut outer = 0;
        let mut last_active: Option<Vec<ContactKind>> = None;
        let mut sticky: Vec<ContactKind> = Vec::new();
        let mut minimal = false;
        let mut prev_violation = f64::INFINITY;

        loop {
            let (c, g, h, v) = self.measure(&phi, &prev.phi, grasp, &lengths, &sticky);
            violation = v;
            for k in &h.kinds {
                if matches!(k, ContactKind::Layer { .. }) && !sticky.contains(k) {
                    sticky.push(*k);
                }
            }
            if !violation.is_finite() {
                return Err(SimError::NonFinite { time });
            }
            if violation <= self.config.tol {
                converged = true;
                break;
            }
            if outer == self.config.max_outer {
                break;
            }

            let eq_matrix = stack_grasp_rows(&c.jacobian, grasp, n);
            let mut eq_rhs = DVector::zeros(c.values.len() + 6);
            eq_rhs.rows_mut(0, c.values.len()).copy_from(&(-&c.values));
            for (i, gi) in g.iter().enumerate() {
                eq_rhs[c.values.len() + i] = -gi;
            }
            // Pulling back toward the prediction every iteration converges only
            // linearly when multipliers are large; once the violation stops
            // halving, take minimal-norm corrections instead.
            if violation > 0.5 * prev_violation {
                minimal = true;
            }
            prev_violation = violation;
            let linear = if minimal {
                DVector::zeros(phi.len())
            } else {
                (&target - &phi).component_mul(&self.masses)
            };
            let base = QpProblem::new(hessian.clone(), linear).with_equalities(eq_matrix, eq_rhs);

            let hint = map_hint(&cache.active, &h.kinds);
            cache.solver.set_warm_start(hint);
            let problem = base.clone().with_inequalities(h.jacobian.clone(), -&h.values);
            let mut sol = cache.solver.solve(&problem)?;
            let mut kinds = h.kinds.clone();
            if sol.status != QpStatus::Solved {
                debug!("projection QP {:?} at t = {time:.3}; retrying without layer contacts", sol.status);
                let (relaxed, table_kinds) = without_layers(&h);
                cache.solver.clear();
                let problem = base.with_inequalities(relaxed.jacobian, -&relaxed.values);
                sol = cache.solver.solve(&problem)?;
                kinds = table_kinds;
            }
            match sol.status {
                QpStatus::Solved => {}
                QpStatus::Infeasible => {
                    return Err(SimError::StepFailed {
                        time,
                        iteration: outer,
                        violation,
                        reason: "linearized constraints are infeasible".into(),
                    })
                }
                // An unfinished working set is not a usable correction; keep the last iterate.
                QpStatus::MaxIterations => {
                    warn!("projection QP hit its iteration cap at t = {time:.3}");
                    cache.solver.clear();
                    break;
                }
            }
            // Backtrack when the linearization overshoots: nearly parallel
            // contact rows can make the full correction far too long.
            let mut alpha = 1.0;
            let accepted = loop {
                let trial = &phi + &sol.q * alpha;
                let v = self.violation_on(&trial, grasp, &lengths, &kinds);
                if v < violation.max(self.config.tol) || (alpha == 1.0 && v <= 2.0 * violation && v < 1e-4) {
                    break Some(trial);
                }
                alpha *= 0.5;
                if alpha < MIN_STEP {
                    break None;
                }
            };
            let Some(next) = accepted else {
                warn!("projection correction rejected at t = {time:.3} (violation {violation:.3e})");
                cache.solver.clear();
                break;
            };
            if alpha < 1.0 {
                debug!("projection step shortened to {alpha} at t = {time:.3}");
            }
            accumulate_table(&sol, &kinds, &mut table_mu);
            last_active = Some(sol.active_set.iter().map(|&i| kinds[i]).collect());
            phi = next;
            outer += 1;
        }

        if !converged {
            warn!("projection stopped after {outer} iterations at t = {time:.3} with violation {violation:.3e}");
        }
        if let Some(active) = last_active {
            cache.active = active;
        }
        cache.normal_impulse = table_mu / dt;
        let phi_dot = (&phi - &prev.phi) / dt;
        Ok(Projection { state: ClothState { phi, phi_dot, time }, outer_iterations: outer, converged, violation })
    }

    /// Advance the grasp by `control`, predict and project.
    pub fn step(
        &self,
        state: &ClothState,
        grasp: &mut GraspSpec,
        control: &Control,
        cache: &mut StepCache,
    ) -> Result<ClothState, SimError> {
        if !control.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { time: state.time });
        }
        grasp.advance(control);
        let phi0 = self.unconstrained_step(state);
        Ok(self.project_step(&phi0, state, grasp, cache)?.state)
    }
}

/// `rho M + dt alpha M + dt² kappa K` for one coordinate block.
fn implicit_matrix(ops: &ClothOperators, p: &ClothParams, dt: f64) -> DMatrix<f64> {
    let mut a = &ops.stiffness * (dt * dt * p.kappa);
    for (k, m) in ops.mass.iter().enumerate() {
        a[(k, k)] += (p.rho + dt * p.alpha_damp) * m;
    }
    a
}

/// `rho M phi_dot - dt (delta M g + kappa K phi)` stacked over the three blocks.
fn implicit_rhs(state: &ClothState, ops: &ClothOperators, p: &ClothParams, dt: f64) -> DVector<f64> {
    let n = ops.mass.len();
    let mut rhs = DVector::zeros(3 * n);
    for d in 0..3 {
        let x = state.phi.rows(d * n, n);
        let kx = &ops.stiffness * x;
        for k in 0..n {
            let grav = if d == 2 { p.delta * ops.mass[k] * p.gravity } else { 0.0 };
            rhs[d * n + k] = p.rho * ops.mass[k] * state.phi_dot[d * n + k] - dt * (grav + p.kappa * kx[k]);
        }
    }
    rhs
}

/// Unconstrained implicit-Euler prediction `phi + dt v⁺`.
///
/// Factors the system on every call; [`SimContext::unconstrained_step`] reuses
/// a precomputed factorization.
pub fn unconstrained_step(
    state: &ClothState,
    ops: &ClothOperators,
    params: &ClothParams,
    dt: f64,
) -> Result<DVector<f64>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig("dt must be positive".into()));
    }
    let chol = Cholesky::new(implicit_matrix(ops, params, dt)).ok_or(SimError::SingularSystem)?;
    let rhs = implicit_rhs(state, ops, params, dt);
    let n = ops.mass.len();
    let mut phi0 = state.phi.clone();
    for d in 0..3 {
        let v = chol.solve(&rhs.rows(d * n, n).clone_owned());
        phi0.rows_mut(d * n, n).axpy(dt, &v, 1.0);
    }
    Ok(phi0)
}

/// Coulomb friction impulse (kg·m/s) for nodes in table contact.
///
/// Opposes the tangential (xy) velocity with magnitude
/// `min(mu * normal_k, m_k * |v_t|)`; `masses` is the stacked 3N mass vector.
pub fn friction_term(
    phi_dot: &DVector<f64>,
    contacts: &ContactSet,
    masses: &DVector<f64>,
    normal_impulse: &DVector<f64>,
    mu: f64,
) -> DVector<f64> {
    let n = phi_dot.len() / 3;
    let mut out = DVector::zeros(3 * n);
    if mu == 0.0 {
        return out;
    }
    for kind in &contacts.kinds {
        let ContactKind::Table { node: k } = *kind else { continue };
        let (vx, vy) = (phi_dot[k], phi_dot[n + k]);
        let speed = vx.hypot(vy);
        if speed == 0.0 {
            continue;
        }
        let mag = (mu * normal_impulse[k]).min(masses[k] * speed);
        out[k] = -mag * vx / speed;
        out[n + k] = -mag * vy / speed;
    }
    out
}

/// Length-constraint Jacobian followed by six unit rows pinning the grasped coordinates.
fn stack_grasp_rows(jac: &CsrMatrix<f64>, grasp: &GraspSpec, n: usize) -> CsrMatrix<f64> {
    let m = jac.nrows();
    let mut coo = CooMatrix::new(m + 6, 3 * n);
    for (i, row) in jac.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            coo.push(i, j, v);
        }
    }
    for (g, &k) in grasp.nodes.iter().enumerate() {
        for d in 0..3 {
            coo.push(m + 3 * g + d, d * n + k, 1.0);
        }
    }
    CsrMatrix::from(&coo)
}

fn map_hint(previous: &[ContactKind], current: &[ContactKind]) -> Vec<usize> {
    previous.iter().filter_map(|k| current.iter().position(|c| c == k)).collect()
}

/// Drop the layer rows, keeping table and shear rows.
fn without_layers(h: &ContactSet) -> (ContactSet, Vec<ContactKind>) {
    let keep: Vec<usize> = (0..h.len()).filter(|&i| !matches!(h.kinds[i], ContactKind::Layer { .. })).collect();
    let kinds: Vec<ContactKind> = keep.iter().map(|&i| h.kinds[i]).collect();
    let mut coo = CooMatrix::new(keep.len(), h.jacobian.ncols());
    for (r, &i) in keep.iter().enumerate() {
        let row = h.jacobian.row(i);
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            coo.push(r, j, v);
        }
    }
    let values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| h.values[i]));
    (ContactSet { kinds: kinds.clone(), values, jacobian: CsrMatrix::from(&coo) }, kinds)
}

fn accumulate_table(sol: &QpSolution, kinds: &[ContactKind], table_mu: &mut DVector<f64>) {
    for (kind, &mu) in kinds.iter().zip(sol.ineq_multipliers.iter()) {
        if let ContactKind::Table { node } = *kind {
            table_mu[node] += mu.max(0.0);
        }
    }
}
