//! Browser bindings for the interactive demo in `www/`.
//!
//! Every entry point returns a [`Run`]: flat, row-major series that the page
//! plots directly, plus a few scalar diagnostics.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use nhtrack::geometry::{dynamics_rhs, restricted_energy, SystemModel};
use nhtrack::ode::{integrate, TimeGrid};
use nhtrack::pmp::{solve_shooting, Costate, Reference, Rollout, ShootingSettings, TerminalMode, TrackingProblem};
use nhtrack::systems::{Particle, Sleigh, SleighParams};
use nhtrack::varint::{solve_del, DelSettings, PsiVelocity};
use nhtrack::{AdmissibleState, DVector};

/// Result of one demo computation.
#[wasm_bindgen]
#[derive(Clone, Debug, Default)]
pub struct Run {
    converged: bool,
    residual: f64,
    iterations: usize,
    cost: f64,
    times: Vec<f64>,
    q: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
    energy: Vec<f64>,
    reference_q: Vec<f64>,
    constraint: Vec<f64>,
    message: String,
}

#[wasm_bindgen]
impl Run {
    pub fn converged(&self) -> bool {
        self.converged
    }
    pub fn residual(&self) -> f64 {
        self.residual
    }
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    pub fn cost(&self) -> f64 {
        self.cost
    }
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }
    /// Configurations, three per sample.
    pub fn q(&self) -> Vec<f64> {
        self.q.clone()
    }
    /// Quasi-velocities, two per sample.
    pub fn v(&self) -> Vec<f64> {
        self.v.clone()
    }
    /// Controls, two per sample (per interval for the variational solver).
    pub fn u(&self) -> Vec<f64> {
        self.u.clone()
    }
    pub fn energy(&self) -> Vec<f64> {
        self.energy.clone()
    }
    /// Reference configurations at the same times, three per sample.
    pub fn reference_q(&self) -> Vec<f64> {
        self.reference_q.clone()
    }
    /// Constraint residual per sample or interval.
    pub fn constraint(&self) -> Vec<f64> {
        self.constraint.clone()
    }
    /// Error text when the computation could not run; empty otherwise.
    pub fn message(&self) -> String {
        self.message.clone()
    }
}

fn failed(e: impl std::fmt::Display) -> Run {
    Run {
        message: e.to_string(),
        ..Run::default()
    }
}

fn sleigh() -> Result<Arc<dyn SystemModel>, nhtrack::Error> {
    Ok(Arc::new(Sleigh::new(SleighParams::paper())?))
}

/// Uncontrolled sleigh motion from `(x, y, θ; v¹, v²)` with RK4 at step `step`.
#[wasm_bindgen]
pub fn sleigh_rollout(x: f64, y: f64, theta: f64, v1: f64, v2: f64, horizon: f64, step: f64) -> Run {
    let run = || -> Result<Run, nhtrack::Error> {
        let model = sleigh()?;
        let start = AdmissibleState::from_slices(&[x, y, theta], &[v1, v2]);
        let field = |_: f64, s: &DVector<f64>| match dynamics_rhs(model.as_ref(), &AdmissibleState::from_stacked(s, 3), &DVector::zeros(2)) {
            Ok((qd, vd)) => AdmissibleState::new(qd, vd).stacked(),
            Err(_) => DVector::from_element(5, f64::NAN),
        };
        let path = integrate(field, &start.stacked(), &TimeGrid::with_step(horizon, step)?)?;
        let mut out = Run {
            converged: true,
            ..Run::default()
        };
        for (t, s) in path {
            let z = AdmissibleState::from_stacked(&s, 3);
            out.times.push(t);
            out.q.extend(z.q.iter());
            out.v.extend(z.v.iter());
            out.energy.push(restricted_energy(model.as_ref(), &z));
        }
        Ok(out)
    };
    run().unwrap_or_else(failed)
}

/// The sleigh tracking run with the midpoint variational integrator: start
/// at `(0, 0, θ₀; 1/4, 1)`, track the uncontrolled motion from
/// `(0, 1/2, 0; 1/3, 1)` over `T = 5` with `steps` intervals, both ends fixed.
#[wasm_bindgen]
pub fn sleigh_tracking(theta0: f64, epsilon: f64, steps: usize, enforce_first_interval: bool) -> Run {
    let run = || -> Result<Run, nhtrack::Error> {
        let model = sleigh()?;
        let start = AdmissibleState::from_slices(&[0.0, 0.5, 0.0], &[1.0 / 3.0, 1.0]);
        let rollout = Rollout::new(model.clone(), start, 5.0, 1e-3)?;
        let problem = TrackingProblem::new(Reference::Rollout(rollout), AdmissibleState::from_slices(&[0.0, 0.0, theta0], &[0.25, 1.0]), 5.0, epsilon)
            .with_terminal(TerminalMode::Hard);
        let settings = DelSettings {
            enforce_first_interval,
            ..DelSettings::default()
        };
        let out = solve_del(model.as_ref(), &problem, TimeGrid::new(0.0, 5.0, steps)?, &settings)?;
        let traj = &out.trajectory;
        let mut run = Run {
            converged: out.converged,
            residual: out.residual_norm,
            iterations: out.iterations.len() - 1,
            cost: traj.cost(model.as_ref(), &problem)?,
            u: traj.controls.iter().flat_map(|u| u.iter().copied()).collect(),
            constraint: traj.constraint_residuals(model.as_ref(), PsiVelocity::Midpoint),
            ..Run::default()
        };
        for (k, z) in traj.nodes.iter().enumerate() {
            let t = traj.grid.time(k);
            run.times.push(t);
            run.q.extend(z.q.iter());
            run.v.extend(z.v.iter());
            run.energy.push(restricted_energy(model.as_ref(), z));
            run.reference_q.extend(problem.reference_at(t)?.q.iter());
        }
        Ok(run)
    };
    run().unwrap_or_else(failed)
}

/// Particle tracking by single shooting. `case` 1 or 2 selects the initial
/// state and the reference; `step` is the RK4 step of the state–costate flow.
#[wasm_bindgen]
pub fn particle_shooting(case: u32, omega: f64, epsilon: f64, step: f64) -> Run {
    let run = || -> Result<Run, nhtrack::Error> {
        let affine = |q0: [f64; 3], q_rate: [f64; 3]| Reference::Affine {
            q0: DVector::from_column_slice(&q0),
            q_rate: DVector::from_column_slice(&q_rate),
            v0: DVector::from_column_slice(&[0.0, 1.0]),
            v_rate: DVector::zeros(2),
        };
        let (reference, start, horizon) = match case {
            1 => (affine([0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]), AdmissibleState::from_slices(&[2.0, 3.0, 2.0], &[0.5, 0.4]), 5.0),
            _ => (affine([1.0, 0.0, 1.0], [0.0, 0.0, 1.0]), AdmissibleState::from_slices(&[0.5, 0.2, 0.7], &[0.5, 0.4]), 4.0),
        };
        let problem = TrackingProblem::new(reference, start, horizon, epsilon).with_omega(omega);
        let settings = ShootingSettings {
            inner_grid: TimeGrid::with_step(horizon, step)?,
            ..ShootingSettings::for_horizon(horizon)?
        };
        let out = solve_shooting(&Particle, &problem, &Costate::zeros(3, 2), &settings)?;
        let traj = &out.trajectory;
        let mut run = Run {
            converged: out.converged,
            residual: out.residual_norm,
            iterations: out.iterations.len() - 1,
            cost: traj.cost(&Particle, &problem)?.total,
            times: traj.times.clone(),
            u: traj.controls.iter().flat_map(|u| u.iter().copied()).collect(),
            ..Run::default()
        };
        for (t, z) in traj.times.iter().zip(&traj.states) {
            run.q.extend(z.q.iter());
            run.v.extend(z.v.iter());
            run.energy.push(restricted_energy(&Particle, z));
            run.reference_q.extend(problem.reference_at(*t)?.q.iter());
        }
        run.constraint = vec![traj.constraint_residual(&Particle)?];
        Ok(run)
    };
    run().unwrap_or_else(failed)
}
