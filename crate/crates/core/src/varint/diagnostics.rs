//! Time series of a solved discrete trajectory and the re-integration check.

use nalgebra::DVector;

use super::discrete::{discrete_lagrangian, PsiVelocity};
use super::solver::{state_distance, DelOutcome, DelSettings, DelSystem, DiscreteTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{dynamics_rhs, restricted_energy, AdmissibleState, SystemModel};
use crate::ode::{rk4_step, TimeGrid};
use crate::pmp::{running_cost, TrackingProblem};

/// One node of the diagnostics series. Interval quantities (`control`,
/// `constraint_residual`) refer to `[t_k, t_{k+1}]` and are absent at the last node.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    /// Running cost `C` at the node, with the control of the adjacent interval.
    pub running_cost: f64,
    /// `Σ_{j<k} L_d(j)`.
    pub action: f64,
    pub energy: f64,
    pub constraint_residual: Option<f64>,
    pub control: Option<DVector<f64>>,
}

/// Per-node cost, cumulative action, restricted energy, `‖Ψ_d‖∞` and controls.
pub fn diagnostics(model: &dyn SystemModel, problem: &TrackingProblem, traj: &DiscreteTrajectory, psi: PsiVelocity) -> Result<Vec<DiagnosticRow>> {
    let steps = traj.steps();
    if traj.nodes.len() != steps + 1 || traj.controls.len() != steps {
        return Err(Error::Dimension {
            field: "controls",
            expected: steps,
            found: traj.controls.len(),
        });
    }
    let residuals = traj.constraint_residuals(model, psi);
    let mut action = 0.0;
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = traj.grid.time(k);
        let u = &traj.controls[k.min(steps - 1)];
        rows.push(DiagnosticRow {
            t,
            running_cost: running_cost(model, problem, t, &traj.nodes[k], u)?,
            action,
            energy: restricted_energy(model, &traj.nodes[k]),
            constraint_residual: residuals.get(k).copied(),
            control: (k < steps).then(|| u.clone()),
        });
        if k < steps {
            action += discrete_lagrangian(model, problem, &traj.nodes[k], &traj.nodes[k + 1], traj.interval(k))?;
        }
    }
    Ok(rows)
}

/// Integrates the controlled equations of motion from node 0 with RK4 at
/// step `h / substeps`, holding `u_k` on each interval, and returns the state at every node time.
pub fn reintegrate_controls(model: &dyn SystemModel, traj: &DiscreteTrajectory, substeps: usize) -> Result<Vec<AdmissibleState>> {
    if substeps == 0 {
        return Err(Error::InvalidParameter {
            name: "substeps",
            reason: "must be positive".into(),
        });
    }
    let n = model.dim();
    let dt = traj.h() / substeps as f64;
    let mut y = traj.nodes[0].stacked();
    let mut out = vec![traj.nodes[0].clone()];
    for (k, u) in traj.controls.iter().enumerate() {
        let f = |_: f64, y: &DVector<f64>| match dynamics_rhs(model, &AdmissibleState::from_stacked(y, n), u) {
            Ok((qd, vd)) => AdmissibleState::new(qd, vd).stacked(),
            Err(_) => DVector::from_element(y.len(), f64::NAN),
        };
        let t0 = traj.grid.time(k);
        for j in 0..substeps {
            y = rk4_step(&f, t0 + j as f64 * dt, &y, dt)?;
        }
        out.push(AdmissibleState::from_stacked(&y, n));
    }
    Ok(out)
}

/// Distance between the last node and the re-integrated endpoint.
pub fn endpoint_discrepancy(model: &dyn SystemModel, traj: &DiscreteTrajectory, substeps: usize) -> Result<f64> {
    let path = reintegrate_controls(model, traj, substeps)?;
    Ok(state_distance(model, traj.nodes.last().expect("non-empty"), path.last().expect("non-empty")))
}

/// Solves at `h` and `h/2` and compares each solution's endpoint with its re-integration.
#[derive(Clone, Debug)]
pub struct RefinementStudy {
    pub coarse: DelOutcome,
    pub fine: DelOutcome,
    pub coarse_discrepancy: f64,
    pub fine_discrepancy: f64,
}

impl RefinementStudy {
    /// Discrepancy ratio under one halving; about 4 for a second-order scheme.
    pub fn ratio(&self) -> f64 {
        self.coarse_discrepancy / self.fine_discrepancy
    }
}

/// Re-integration sub-steps per interval.
pub const REINTEGRATION_SUBSTEPS: usize = 100;

/// Runs the h-halving study. Every interval is constrained here so that the
/// first interval is consistent with the equations of motion as well.
///
/// Both levels are first solved from the configured guess; a level that fails
/// is retried from the other level's solution (restricted or prolonged).
pub fn compare_refinement(model: &dyn SystemModel, problem: &TrackingProblem, grid: TimeGrid, settings: &DelSettings) -> Result<RefinementStudy> {
    let settings = DelSettings {
        enforce_first_interval: true,
        ..*settings
    };
    let coarse_sys = DelSystem::new(model, problem, grid, settings)?;
    let fine_sys = DelSystem::new(model, problem, grid.refined(), settings)?;
    let mut coarse = coarse_sys.solve_from(coarse_sys.initial_trajectory()?)?;
    let mut fine = fine_sys.solve_from(fine_sys.initial_trajectory()?)?;
    if !fine.converged && coarse.converged {
        fine = fine_sys.solve_from(coarse.trajectory.prolonged(model))?;
    }
    if !coarse.converged && fine.converged {
        if let Some(seed) = fine.trajectory.coarsened(model) {
            coarse = coarse_sys.solve_from(seed)?;
        }
    }
    let coarse_discrepancy = endpoint_discrepancy(model, &coarse.trajectory, REINTEGRATION_SUBSTEPS)?;
    let fine_discrepancy = endpoint_discrepancy(model, &fine.trajectory, REINTEGRATION_SUBSTEPS)?;
    Ok(RefinementStudy {
        coarse,
        fine,
        coarse_discrepancy,
        fine_discrepancy,
    })
}
