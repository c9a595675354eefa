use log::{debug, warn};
use nalgebra::DVector;

use super::{solve_ocp, CondensedOcp, ControlHistory, MpcError, OcpConfig};
use crate::koopman::KoopmanModel;
use crate::sim::Simulator;
use crate::Control;

/// Per-step solver record.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub active_rows: usize,
    /// Largest KKT residual of the accepted solve (0 for a fallback step).
    pub kkt_residual: f64,
    /// The solve failed and the previous plan, shifted by one step, was executed.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct MpcResult {
    pub executed_controls: Vec<Control>,
    /// Simulator states from the end of settling onward (`executed_controls.len() + 1`).
    pub state_trajectory: Vec<DVector<f64>>,
    pub planned_sequences: Vec<Vec<Control>>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// History at the first control step, for post-hoc constraint checks.
    pub initial_history: ControlHistory,
    /// Why the loop stopped early, if it did.
    pub failure: Option<MpcError>,
}

impl MpcResult {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.state_trajectory.last().expect("at least the settled state is recorded")
    }
}

/// Settle, then re-plan from the simulator state and apply the first planned displacement each step.
pub fn mpc_loop(
    sim: &mut Simulator,
    model: &KoopmanModel,
    phi_target: &DVector<f64>,
    config: &OcpConfig,
    total_steps: usize,
    settle_steps: usize,
) -> Result<MpcResult, MpcError> {
    let ocp = CondensedOcp::new(model, config)?;
    if phi_target.len() != model.state_dim() {
        return Err(MpcError::Dimension { got: phi_target.len(), want: model.state_dim() });
    }
    sim.settle(settle_steps).map_err(|source| MpcError::Sim { step: 0, source })?;
    let zr = model.lift(phi_target);
    let mut history = ControlHistory::at_rest(sim.grasp());
    let mut result = MpcResult {
        executed_controls: Vec::with_capacity(total_steps),
        state_trajectory: vec![sim.state().phi.clone()],
        planned_sequences: Vec::with_capacity(total_steps),
        diagnostics: Vec::with_capacity(total_steps),
        initial_history: history,
        failure: None,
    };
    let mut warm: Vec<usize> = Vec::new();
    for step in 0..total_steps {
        let problem = ocp.instance(model.lift(&sim.state().phi), zr.clone(), &history);
        let (plan, diag) = match solve_ocp(&problem, config, &warm, step) {
            Ok(sol) => {
                let k = &sol.kkt;
                let residual = k.primal_ineq.max(k.dual).max(k.stationarity).max(k.complementarity);
                debug!("step {step}: {} iterations, cost {:.6e}, kkt {residual:.1e}", sol.iterations, sol.cost);
                warm = sol.active_set.clone();
                let diag = StepDiagnostics {
                    iterations: sol.iterations,
                    objective: sol.cost,
                    active_rows: sol.active_set.len(),
                    kkt_residual: residual,
                    fallback: false,
                };
                (sol.plan, diag)
            }
            Err(e) => match result.planned_sequences.last() {
                Some(prev) => {
                    warn!("{e}; executing the shifted previous plan");
                    warm.clear();
                    let mut plan = prev[1..].to_vec();
                    plan.push([0.0; 6]);
                    let diag = StepDiagnostics {
                        iterations: 0,
                        objective: f64::NAN,
                        active_rows: 0,
                        kkt_residual: 0.0,
                        fallback: true,
                    };
                    (plan, diag)
                }
                None => {
                    result.failure = Some(e);
                    return Ok(result);
                }
            },
        };
        let du = plan[0];
        if let Err(source) = sim.step(&du) {
            result.failure = Some(MpcError::Sim { step, source });
            return Ok(result);
        }
        history.push(&du);
        result.executed_controls.push(du);
        result.planned_sequences.push(plan);
        result.diagnostics.push(diag);
        result.state_trajectory.push(sim.state().phi.clone());
    }
    Ok(result)
}
