//! The constrained discrete Euler–Lagrange boundary value problem and its
//! Newton solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::discrete::{
    constraint_slot_jacobian, discrete_constraint, discrete_lagrangian, lagrangian_slot_gradient, Interval, PsiVelocity, SlotDerivatives,
};
use super::lagrangian::reconstructed_control;
use crate::error::{Error, Result};
use crate::geometry::{check_state, configuration_error, AdmissibleState, SystemModel};
use crate::linalg::BandMatrix;
use crate::ode::TimeGrid;
use crate::pmp::{NewtonRecord, TerminalMode, TrackingProblem};

/// Starting point of the Newton iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// Nodes interpolated linearly between `γ(0)` and `γ_r(T)`.
    #[default]
    LinearInterpolation,
    /// Nodes sampled from the reference (node 0 is always `γ(0)`).
    ReferenceSamples,
}

/// Settings of the discrete Euler–Lagrange solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelSettings {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub initial_guess: InitialGuess,
    /// Also constrain the first interval, with its own multiplier `λ⁰`.
    pub enforce_first_interval: bool,
    pub psi_velocity: PsiVelocity,
    pub slot_derivatives: SlotDerivatives,
    pub damping: f64,
    pub max_halvings: usize,
}

impl Default for DelSettings {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iters: 100,
            fd_step: 1e-6,
            initial_guess: InitialGuess::LinearInterpolation,
            enforce_first_interval: false,
            psi_velocity: PsiVelocity::Midpoint,
            slot_derivatives: SlotDerivatives::Exact,
            damping: 0.5,
            max_halvings: 30,
        }
    }
}

impl DelSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.newton_tol > 0.0) || !(self.fd_step > 0.0) {
            return bad("newton_tol", "tolerances and steps must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be positive");
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad("damping", "backtracking factor must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Nodes, multipliers and recovered controls of a discrete trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTrajectory {
    pub grid: TimeGrid,
    pub nodes: Vec<AdmissibleState>,
    /// `λᵏ` for every interval `k = 0 … N−1`; `λ⁰ = 0` unless the first interval is enforced.
    pub multipliers: Vec<DVector<f64>>,
    /// `u_k = v_{k,k+1} + Γ(q_{k+1/2})(v_{k+1/2}, v_{k+1/2}) + ∇V(q_{k+1/2})` per interval.
    pub controls: Vec<DVector<f64>>,
}

impl DiscreteTrajectory {
    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn interval(&self, k: usize) -> Interval {
        Interval {
            t: self.grid.time(k),
            h: self.grid.h(),
        }
    }

    /// Recomputes the per-interval controls from the nodes.
    pub fn recover_controls(&mut self, model: &dyn SystemModel) {
        let h = self.h();
        self.controls = self
            .nodes
            .windows(2)
            .map(|z| {
                let qm = (&z[0].q + &z[1].q) * 0.5;
                let vm = (&z[0].v + &z[1].v) * 0.5;
                reconstructed_control(model, &qm, &vm, &((&z[1].v - &z[0].v) / h))
            })
            .collect();
    }

    /// Every other node of a trajectory with an even step count, with
    /// multipliers rescaled to the doubled step. Used to seed a coarse solve.
    pub fn coarsened(&self, model: &dyn SystemModel) -> Option<Self> {
        if self.steps() % 2 != 0 || self.steps() < 4 {
            return None;
        }
        let mut traj = Self {
            grid: TimeGrid {
                steps: self.steps() / 2,
                ..self.grid
            },
            nodes: self.nodes.iter().step_by(2).cloned().collect(),
            multipliers: self.multipliers.iter().step_by(2).map(|l| l * 2.0).collect(),
            controls: Vec::new(),
        };
        traj.recover_controls(model);
        Some(traj)
    }

    /// Inserts interval midpoints, halving the step and the multipliers. Used to seed a fine solve.
    pub fn prolonged(&self, model: &dyn SystemModel) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.steps() + 1);
        let mut multipliers = Vec::with_capacity(2 * self.steps());
        for (k, z) in self.nodes.windows(2).enumerate() {
            nodes.push(z[0].clone());
            nodes.push(AdmissibleState::new((&z[0].q + &z[1].q) * 0.5, (&z[0].v + &z[1].v) * 0.5));
            multipliers.push(&self.multipliers[k] * 0.5);
            multipliers.push(&self.multipliers[k] * 0.5);
        }
        nodes.push(self.nodes.last().expect("non-empty").clone());
        let mut traj = Self {
            grid: self.grid.refined(),
            nodes,
            multipliers,
            controls: Vec::new(),
        };
        traj.recover_controls(model);
        traj
    }

    /// `Σ L_d` over all intervals.
    pub fn action(&self, model: &dyn SystemModel, problem: &TrackingProblem) -> Result<f64> {
        let mut sum = 0.0;
        for k in 0..self.steps() {
            sum += discrete_lagrangian(model, problem, &self.nodes[k], &self.nodes[k + 1], self.interval(k))?;
        }
        Ok(sum)
    }

    /// Total cost `Σ L_d / λ₀ (+ ω Φ in Mayer mode)`, comparable with the continuous cost.
    pub fn cost(&self, model: &dyn SystemModel, problem: &TrackingProblem) -> Result<f64> {
        let terminal = match problem.terminal {
            TerminalMode::Mayer => problem.omega * problem.terminal_cost(model, self.nodes.last().expect("non-empty"))?,
            TerminalMode::Hard => 0.0,
        };
        Ok(self.action(model, problem)? / problem.lambda0 + terminal)
    }

    /// `‖Ψ_d(k)‖∞` for every interval.
    pub fn constraint_residuals(&self, model: &dyn SystemModel, psi: PsiVelocity) -> Vec<f64> {
        self.nodes.windows(2).map(|z| discrete_constraint(model, &z[0], &z[1], self.h(), psi).amax()).collect()
    }
}

/// Position of the unknowns in the flat Newton vector.
///
/// Blocks are ordered by node: `[λ⁰]`, then `[q_k, v_k, λᵏ]` for
/// `k = 1 … N−1`, then `[q_N, v_N]` in Mayer mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub r: usize,
    pub steps: usize,
    pub first_interval: bool,
    pub free_end: bool,
}

impl Layout {
    pub fn new(model: &dyn SystemModel, steps: usize, settings: &DelSettings, terminal: TerminalMode) -> Self {
        Self {
            n: model.dim(),
            r: model.rank(),
            steps,
            first_interval: settings.enforce_first_interval,
            free_end: terminal == TerminalMode::Mayer,
        }
    }

    fn block(&self) -> usize {
        2 * self.n + self.r
    }

    fn offset(&self) -> usize {
        if self.first_interval {
            self.n
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.offset() + (self.steps - 1) * self.block() + if self.free_end { self.n + self.r } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of `q_k[0]` (the node's `v_k` follows at `+n`), or `None` for fixed nodes.
    pub fn node(&self, k: usize) -> Option<usize> {
        if k == 0 || (k == self.steps && !self.free_end) || k > self.steps {
            None
        } else {
            Some(self.offset() + (k - 1) * self.block())
        }
    }

    /// Index of `λᵏ[0]`, or `None` if interval `k` is not enforced.
    pub fn multiplier(&self, k: usize) -> Option<usize> {
        match k {
            0 if self.first_interval => Some(0),
            0 => None,
            k if k < self.steps => Some(self.offset() + (k - 1) * self.block() + self.n + self.r),
            _ => None,
        }
    }

    /// Half bandwidth that covers every interval's coupling.
    pub fn bandwidth(&self) -> usize {
        2 * self.block()
    }

    /// Global indices of the local interval variables `[q_k, v_k, q_{k+1}, v_{k+1}, λᵏ]`.
    fn local_indices(&self, k: usize) -> Vec<Option<usize>> {
        let (n, r) = (self.n, self.r);
        let mut idx = Vec::with_capacity(3 * n + 2 * r);
        for node in [k, k + 1] {
            let base = self.node(node);
            idx.extend((0..n + r).map(|c| base.map(|b| b + c)));
        }
        let lam = self.multiplier(k);
        idx.extend((0..n).map(|c| lam.map(|b| b + c)));
        idx
    }

    pub fn pack(&self, traj: &DiscreteTrajectory) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for k in 0..=self.steps {
            if let Some(b) = self.node(k) {
                x.rows_mut(b, self.n).copy_from(&traj.nodes[k].q);
                x.rows_mut(b + self.n, self.r).copy_from(&traj.nodes[k].v);
            }
            if let Some(b) = self.multiplier(k) {
                x.rows_mut(b, self.n).copy_from(&traj.multipliers[k]);
            }
        }
        x
    }

    /// Writes the unknowns into a copy of `template` (whose fixed nodes are kept).
    pub fn unpack(&self, x: &DVector<f64>, template: &DiscreteTrajectory) -> DiscreteTrajectory {
        let mut traj = template.clone();
        for k in 0..=self.steps {
            if let Some(b) = self.node(k) {
                traj.nodes[k].q = x.rows(b, self.n).into_owned();
                traj.nodes[k].v = x.rows(b + self.n, self.r).into_owned();
            }
            if k < self.steps {
                traj.multipliers[k] = match self.multiplier(k) {
                    Some(b) => x.rows(b, self.n).into_owned(),
                    None => DVector::zeros(self.n),
                };
            }
        }
        traj
    }
}

/// A discrete tracking problem on a fixed grid.
pub struct DelSystem<'a> {
    pub model: &'a dyn SystemModel,
    pub problem: &'a TrackingProblem,
    pub settings: DelSettings,
    pub grid: TimeGrid,
    pub layout: Layout,
}

impl<'a> DelSystem<'a> {
    pub fn new(model: &'a dyn SystemModel, problem: &'a TrackingProblem, grid: TimeGrid, settings: DelSettings) -> Result<Self> {
        problem.validate(model)?;
        settings.validate()?;
        grid.validate()?;
        if grid.steps < 2 {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: "the discrete problem needs at least two intervals".into(),
            });
        }
        if grid.t0 != 0.0 || (grid.tf - problem.horizon).abs() > 1e-12 * problem.horizon.max(1.0) {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: format!("grid must span [0, {}]", problem.horizon),
            });
        }
        Ok(Self {
            model,
            problem,
            settings,
            grid,
            layout: Layout::new(model, grid.steps, &settings, problem.terminal),
        })
    }

    fn interval(&self, k: usize) -> Interval {
        Interval {
            t: self.grid.time(k),
            h: self.grid.h(),
        }
    }

    fn enforced(&self, k: usize) -> bool {
        self.layout.multiplier(k).is_some()
    }

    /// Boundary nodes filled in, interior nodes from the configured guess, zero multipliers.
    pub fn initial_trajectory(&self) -> Result<DiscreteTrajectory> {
        let n_steps = self.grid.steps;
        let start = self.problem.initial_state.clone();
        let end = self.problem.reference_at(self.problem.horizon)?;
        check_state(self.model, &end)?;
        let mut nodes = Vec::with_capacity(n_steps + 1);
        for k in 0..=n_steps {
            let node = if k == 0 {
                start.clone()
            } else if k == n_steps && self.problem.terminal == TerminalMode::Hard {
                end.clone()
            } else {
                match self.settings.initial_guess {
                    InitialGuess::LinearInterpolation => {
                        let s = k as f64 / n_steps as f64;
                        AdmissibleState::new(&start.q + (&end.q - &start.q) * s, &start.v + (&end.v - &start.v) * s)
                    }
                    InitialGuess::ReferenceSamples => self.problem.reference_at(self.grid.time(k))?,
                }
            };
            nodes.push(node);
        }
        let mut traj = DiscreteTrajectory {
            grid: self.grid,
            nodes,
            multipliers: vec![DVector::zeros(self.model.dim()); n_steps],
            controls: Vec::new(),
        };
        traj.recover_controls(self.model);
        Ok(traj)
    }

    /// `Ã_d = Σ L_d + Σ_enforced λᵏ·Ψ_d(k) (+ λ₀ ω Φ in Mayer mode)`.
    pub fn extended_action(&self, traj: &DiscreteTrajectory) -> Result<f64> {
        let mut total = 0.0;
        let h = self.grid.h();
        for k in 0..self.grid.steps {
            let (z0, z1) = (&traj.nodes[k], &traj.nodes[k + 1]);
            total += discrete_lagrangian(self.model, self.problem, z0, z1, self.interval(k))?;
            if self.enforced(k) {
                total += traj.multipliers[k].dot(&discrete_constraint(self.model, z0, z1, h, self.settings.psi_velocity));
            }
        }
        if self.problem.terminal == TerminalMode::Mayer {
            total += self.problem.lambda0 * self.problem.omega * self.problem.terminal_cost(self.model, traj.nodes.last().expect("non-empty"))?;
        }
        Ok(total)
    }

    /// Gradient of `L_d + λ·Ψ_d` on one interval with respect to `[q_k, v_k, q_{k+1}, v_{k+1}, λ]`.
    /// Without enforcement the multiplier rows are zero.
    fn local_gradient(&self, iv: Interval, enforced: bool, z0: &AdmissibleState, z1: &AdmissibleState, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, r) = (self.layout.n, self.layout.r);
        let s = &self.settings;
        let mut g = DVector::zeros(3 * n + 2 * r);
        let gl = lagrangian_slot_gradient(self.model, self.problem, z0, z1, iv, s.slot_derivatives, s.fd_step)?.stacked();
        g.rows_mut(0, 2 * (n + r)).copy_from(&gl);
        if enforced {
            let jac = constraint_slot_jacobian(self.model, z0, z1, iv.h, s.psi_velocity, s.slot_derivatives, s.fd_step).stacked();
            let mut head = g.rows_mut(0, 2 * (n + r));
            head += jac.transpose() * lambda;
            g.rows_mut(2 * (n + r), n).copy_from(&discrete_constraint(self.model, z0, z1, iv.h, s.psi_velocity));
        }
        Ok(g)
    }

    fn local_point(traj: &DiscreteTrajectory, k: usize) -> (AdmissibleState, AdmissibleState, DVector<f64>) {
        (traj.nodes[k].clone(), traj.nodes[k + 1].clone(), traj.multipliers[k].clone())
    }

    fn split_local(&self, y: &DVector<f64>) -> (AdmissibleState, AdmissibleState, DVector<f64>) {
        let (n, r) = (self.layout.n, self.layout.r);
        (
            AdmissibleState::new(y.rows(0, n).into_owned(), y.rows(n, r).into_owned()),
            AdmissibleState::new(y.rows(n + r, n).into_owned(), y.rows(2 * n + r, r).into_owned()),
            y.rows(2 * (n + r), n).into_owned(),
        )
    }

    fn join_local(z0: &AdmissibleState, z1: &AdmissibleState, lambda: &DVector<f64>) -> DVector<f64> {
        let parts = [&z0.q, &z0.v, &z1.q, &z1.v, lambda];
        DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
    }

    /// Central-difference Hessian of the local interval function.
    fn local_hessian(&self, iv: Interval, enforced: bool, z0: &AdmissibleState, z1: &AdmissibleState, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let y = Self::join_local(z0, z1, lambda);
        let m = y.len();
        let mut hess = DMatrix::zeros(m, m);
        for j in 0..m {
            let step = self.settings.fd_step * y[j].abs().max(1.0);
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[j] += step;
            ym[j] -= step;
            let (a0, a1, al) = self.split_local(&yp);
            let (b0, b1, bl) = self.split_local(&ym);
            let col = (self.local_gradient(iv, enforced, &a0, &a1, &al)? - self.local_gradient(iv, enforced, &b0, &b1, &bl)?) / (yp[j] - ym[j]);
            hess.set_column(j, &col);
        }
        Ok(hess)
    }

    /// Gradient of the extended action with respect to the unknowns: the stacked
    /// discrete Euler–Lagrange equations and enforced constraints.
    pub fn residual(&self, traj: &DiscreteTrajectory) -> Result<DVector<f64>> {
        let mut res = DVector::zeros(self.layout.len());
        for k in 0..self.grid.steps {
            let (z0, z1, lam) = Self::local_point(traj, k);
            let g = self.local_gradient(self.interval(k), self.enforced(k), &z0, &z1, &lam)?;
            for (i, idx) in self.layout.local_indices(k).into_iter().enumerate() {
                if let Some(row) = idx {
                    res[row] += g[i];
                }
            }
        }
        if self.problem.terminal == TerminalMode::Mayer {
            let end = traj.nodes.last().expect("non-empty");
            let (dq, _) = self.problem.tracking_error(self.model, self.problem.horizon, end)?;
            let b = self.layout.node(self.grid.steps).expect("free terminal node");
            let mut rows = res.rows_mut(b, self.layout.n);
            rows += dq * (self.problem.lambda0 * self.problem.omega);
        }
        if res.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteResidual);
        }
        Ok(res)
    }

    /// Banded Jacobian of [`DelSystem::residual`].
    pub fn jacobian(&self, traj: &DiscreteTrajectory) -> Result<BandMatrix> {
        let bw = self.layout.bandwidth();
        let mut jac = BandMatrix::zeros(self.layout.len(), bw, bw);
        for k in 0..self.grid.steps {
            let (z0, z1, lam) = Self::local_point(traj, k);
            let hess = self.local_hessian(self.interval(k), self.enforced(k), &z0, &z1, &lam)?;
            let idx = self.layout.local_indices(k);
            for (i, row) in idx.iter().enumerate() {
                let Some(row) = *row else { continue };
                for (j, col) in idx.iter().enumerate() {
                    if let Some(col) = *col {
                        if hess[(i, j)] != 0.0 {
                            jac.add(row, col, hess[(i, j)]);
                        }
                    }
                }
            }
        }
        if self.problem.terminal == TerminalMode::Mayer {
            let b = self.layout.node(self.grid.steps).expect("free terminal node");
            for i in 0..self.layout.n {
                jac.add(b + i, b + i, self.problem.lambda0 * self.problem.omega);
            }
        }
        Ok(jac)
    }

    /// Damped Newton iteration from `start`.
    pub fn solve_from(&self, start: DiscreteTrajectory) -> Result<DelOutcome> {
        let template = start;
        let mut x = self.layout.pack(&template);
        let mut traj = self.layout.unpack(&x, &template);
        let mut res = self.residual(&traj)?;
        let mut log = vec![NewtonRecord {
            iteration: 0,
            residual_norm: res.amax(),
            step: 0.0,
            levenberg: 0.0,
        }];
        let s = &self.settings;
        let mut converged = res.amax() <= s.newton_tol;
        for iteration in 1..=s.max_iters {
            if converged {
                break;
            }
            let lu = self.jacobian(&traj)?.lu()?;
            let delta = lu.solve(&(-&res));
            let merit = res.norm();
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=s.max_halvings {
                let trial_x = &x + &delta * step;
                let trial = self.layout.unpack(&trial_x, &template);
                if let Ok(r) = self.residual(&trial) {
                    if r.norm() <= (1.0 - 1e-4 * step) * merit {
                        accepted = Some((trial_x, trial, r));
                        break;
                    }
                }
                step *= s.damping;
            }
            let Some((nx, nt, nr)) = accepted else { break };
            x = nx;
            traj = nt;
            res = nr;
            log.push(NewtonRecord {
                iteration,
                residual_norm: res.amax(),
                step,
                levenberg: 0.0,
            });
            converged = res.amax() <= s.newton_tol;
        }
        traj.recover_controls(self.model);
        Ok(DelOutcome {
            residual_norm: res.amax(),
            converged,
            iterations: log,
            trajectory: traj,
        })
    }
}

/// Result of [`solve_del`]. Nonconvergence is reported, not raised.
#[derive(Clone, Debug)]
pub struct DelOutcome {
    pub trajectory: DiscreteTrajectory,
    pub converged: bool,
    /// `‖residual‖∞` at the returned iterate.
    pub residual_norm: f64,
    pub iterations: Vec<NewtonRecord>,
}

/// Solves the discrete Euler–Lagrange boundary value problem on `grid`.
pub fn solve_del(model: &dyn SystemModel, problem: &TrackingProblem, grid: TimeGrid, settings: &DelSettings) -> Result<DelOutcome> {
    let system = DelSystem::new(model, problem, grid, *settings)?;
    let start = system.initial_trajectory()?;
    system.solve_from(start)
}

/// Stacked discrete Euler–Lagrange residual of `traj` (whose boundary nodes are taken as given).
pub fn del_residual(model: &dyn SystemModel, problem: &TrackingProblem, traj: &DiscreteTrajectory, settings: &DelSettings) -> Result<DVector<f64>> {
    check_trajectory(model, traj)?;
    DelSystem::new(model, problem, traj.grid, *settings)?.residual(traj)
}

/// Extended discrete action of `traj`.
pub fn extended_action(model: &dyn SystemModel, problem: &TrackingProblem, traj: &DiscreteTrajectory, settings: &DelSettings) -> Result<f64> {
    check_trajectory(model, traj)?;
    DelSystem::new(model, problem, traj.grid, *settings)?.extended_action(traj)
}

fn check_trajectory(model: &dyn SystemModel, traj: &DiscreteTrajectory) -> Result<()> {
    let steps = traj.grid.steps;
    if traj.nodes.len() != steps + 1 {
        return Err(Error::Dimension {
            field: "nodes",
            expected: steps + 1,
            found: traj.nodes.len(),
        });
    }
    if traj.multipliers.len() != steps {
        return Err(Error::Dimension {
            field: "multipliers",
            expected: steps,
            found: traj.multipliers.len(),
        });
    }
    for z in &traj.nodes {
        check_state(model, z)?;
    }
    for l in &traj.multipliers {
        if l.len() != model.dim() {
            return Err(Error::Dimension {
                field: "multipliers",
                expected: model.dim(),
                found: l.len(),
            });
        }
    }
    Ok(())
}

/// Condition estimate of the local solvability matrix at one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityReport {
    pub condition: f64,
    pub nonsingular: bool,
}

/// Condition above which the local solvability matrix is treated as singular.
pub const REGULARITY_LIMIT: f64 = 1e12;

/// Builds the matrix `M` of the node-`k` equations (`∂Ã/∂q_k`, `∂Ã/∂v_k`,
/// `Ψ_d(k)`) differentiated with respect to the forward unknowns
/// `(q_{k+1}, v_{k+1}, λᵏ)` and returns its 2-norm condition number.
pub fn regularity_check(
    model: &dyn SystemModel,
    problem: &TrackingProblem,
    z0: &AdmissibleState,
    z1: &AdmissibleState,
    lambda: &DVector<f64>,
    iv: Interval,
    settings: &DelSettings,
) -> Result<RegularityReport> {
    check_state(model, z0)?;
    check_state(model, z1)?;
    let grid = TimeGrid::new(0.0, problem.horizon, 2)?;
    let system = DelSystem {
        model,
        problem,
        settings: *settings,
        grid,
        layout: Layout::new(model, 2, settings, problem.terminal),
    };
    let hess = system.local_hessian(iv, true, z0, z1, lambda)?;
    let (n, r) = (model.dim(), model.rank());
    let rows: Vec<usize> = (0..n + r).chain(2 * (n + r)..3 * n + 2 * r).collect();
    let cols: Vec<usize> = (n + r..2 * (n + r)).chain(2 * (n + r)..3 * n + 2 * r).collect();
    let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| hess[(rows[i], cols[j])]);
    let sv = m.svd(false, false).singular_values;
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    Ok(RegularityReport {
        condition,
        nonsingular: condition.is_finite() && condition < REGULARITY_LIMIT,
    })
}

/// Regularity of every interval of a solved trajectory.
pub fn regularity_sweep(model: &dyn SystemModel, problem: &TrackingProblem, traj: &DiscreteTrajectory, settings: &DelSettings) -> Result<Vec<RegularityReport>> {
    (0..traj.steps())
        .map(|k| regularity_check(model, problem, &traj.nodes[k], &traj.nodes[k + 1], &traj.multipliers[k], traj.interval(k), settings))
        .collect()
}

/// `‖z_a − z_b‖` with wrapped angle differences.
pub fn state_distance(model: &dyn SystemModel, a: &AdmissibleState, b: &AdmissibleState) -> f64 {
    (configuration_error(model, &a.q, &b.q).norm_squared() + (&a.v - &b.v).norm_squared()).sqrt()
}
