//! Indirect solution of the tracking problem through the maximum principle.
//!
//! With `u* = −μ/(λ₀ε)` the state–costate system is
//!
//! ```text
//! q̇ = ρ(q) v,   v̇ = −Γ(q)(v, v) − ∇V + u*
//! −λ̇_i = λ₀(q − q_r)_i + λ_j ∂_iρ^j_A v^A + μ_A ∂v̇^A/∂q^i
//! −μ̇_A = λ₀(v − v_r)_A + λ_i ρ^i_A + μ_B ∂v̇^B/∂v^A
//! ```
//!
//! and the unknown initial costate `α = (λ(0), μ(0))` is found by single
//! shooting with a damped Newton iteration.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_state, configuration_error, dynamics_rhs, quadratic_term, AdmissibleState, ControlVector, SystemModel};
use crate::ode::{integrate, TimeGrid};

/// Reference trajectory `γ_r(t)`.
#[derive(Clone, Debug)]
pub enum Reference {
    /// `q_r(t) = q0 + t q_rate`, `v_r(t) = v0 + t v_rate`.
    Affine {
        q0: DVector<f64>,
        q_rate: DVector<f64>,
        v0: DVector<f64>,
        v_rate: DVector<f64>,
    },
    /// Uncontrolled motion of a model from a given start.
    Rollout(Rollout),
}

impl Reference {
    /// A reference that sits at one state forever.
    pub fn constant(state: &AdmissibleState) -> Self {
        Reference::Affine {
            q0: state.q.clone(),
            q_rate: DVector::zeros(state.q.len()),
            v0: state.v.clone(),
            v_rate: DVector::zeros(state.v.len()),
        }
    }

    pub fn sample(&self, t: f64) -> Result<AdmissibleState> {
        match self {
            Reference::Affine { q0, q_rate, v0, v_rate } => Ok(AdmissibleState::new(q0 + q_rate * t, v0 + v_rate * t)),
            Reference::Rollout(r) => r.sample(t),
        }
    }
}

/// Uncontrolled RK4 rollout, sampled with cubic Hermite interpolation between
/// grid nodes and exactly at the nodes themselves.
#[derive(Clone)]
pub struct Rollout {
    model: Arc<dyn SystemModel>,
    start: AdmissibleState,
    grid: TimeGrid,
    nodes: Vec<DVector<f64>>,
    slopes: Vec<DVector<f64>>,
}

impl fmt::Debug for Rollout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rollout")
            .field("model", &self.model.name())
            .field("start", &self.start)
            .field("grid", &self.grid)
            .finish()
    }
}

fn uncontrolled_field(model: &dyn SystemModel, y: &DVector<f64>) -> DVector<f64> {
    let n = model.dim();
    let state = AdmissibleState::from_stacked(y, n);
    match dynamics_rhs(model, &state, &DVector::zeros(model.rank())) {
        Ok((qd, vd)) => AdmissibleState::new(qd, vd).stacked(),
        Err(_) => DVector::from_element(y.len(), f64::NAN),
    }
}

impl Rollout {
    pub fn new(model: Arc<dyn SystemModel>, start: AdmissibleState, horizon: f64, h: f64) -> Result<Self> {
        check_state(model.as_ref(), &start)?;
        let grid = TimeGrid::with_step(horizon, h)?;
        let samples = integrate(|_, y| uncontrolled_field(model.as_ref(), y), &start.stacked(), &grid)?;
        let nodes: Vec<_> = samples.into_iter().map(|(_, y)| y).collect();
        let slopes = nodes.iter().map(|y| uncontrolled_field(model.as_ref(), y)).collect();
        Ok(Self {
            model,
            start,
            grid,
            nodes,
            slopes,
        })
    }

    pub fn start(&self) -> &AdmissibleState {
        &self.start
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn model(&self) -> &Arc<dyn SystemModel> {
        &self.model
    }

    pub fn sample(&self, t: f64) -> Result<AdmissibleState> {
        let h = self.grid.h();
        let tol = 1e-9 * self.grid.tf.abs().max(1.0);
        if t < self.grid.t0 - tol || t > self.grid.tf + tol {
            return Err(Error::OutsideHorizon { t, horizon: self.grid.tf });
        }
        let n = self.model.dim();
        let x = (t - self.grid.t0) / h;
        let nearest = x.round();
        if (x - nearest).abs() * h <= 1e-9 {
            let k = (nearest as usize).min(self.grid.steps);
            return Ok(AdmissibleState::from_stacked(&self.nodes[k], n));
        }
        let k = (x.floor() as usize).min(self.grid.steps - 1);
        let s = x - k as f64;
        let (s2, s3) = (s * s, s * s * s);
        let y = &self.nodes[k] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + &self.slopes[k] * ((s3 - 2.0 * s2 + s) * h)
            + &self.nodes[k + 1] * (-2.0 * s3 + 3.0 * s2)
            + &self.slopes[k + 1] * ((s3 - s2) * h);
        Ok(AdmissibleState::from_stacked(&y, n))
    }
}

/// How the terminal state enters the problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalMode {
    /// Terminal cost `ω Φ` with `Φ = ½‖q(T) − q_r(T)‖²`.
    Mayer,
    /// Endpoint constraint `γ(T) = γ_r(T)`.
    Hard,
}

impl fmt::Display for TerminalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalMode::Mayer => "mayer",
            TerminalMode::Hard => "hard",
        })
    }
}

/// Fixed-horizon tracking problem
/// `min ∫₀ᵀ ½(‖q − q_r‖² + ‖v − v_r‖² + ε‖u‖²) dt (+ ω Φ)`.
#[derive(Clone, Debug)]
pub struct TrackingProblem {
    pub reference: Reference,
    pub horizon: f64,
    pub epsilon: f64,
    pub omega: f64,
    pub lambda0: f64,
    /// Weight on the tracking part `½(‖q − q_r‖² + ‖v − v_r‖²)` of the running cost (1 by default).
    pub tracking_weight: f64,
    pub terminal: TerminalMode,
    pub initial_state: AdmissibleState,
}

impl TrackingProblem {
    /// Mayer problem with `ω = 1`, `λ₀ = 1`.
    pub fn new(reference: Reference, initial_state: AdmissibleState, horizon: f64, epsilon: f64) -> Self {
        Self {
            reference,
            horizon,
            epsilon,
            omega: 1.0,
            lambda0: 1.0,
            tracking_weight: 1.0,
            terminal: TerminalMode::Mayer,
            initial_state,
        }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalMode) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn validate(&self, model: &dyn SystemModel) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::SingularProblem(self.epsilon));
        }
        let positive = |name: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {x}"),
                })
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("horizon", self.horizon)?;
        positive("lambda0", self.lambda0)?;
        if self.terminal == TerminalMode::Mayer {
            positive("omega", self.omega)?;
        }
        if !(self.tracking_weight >= 0.0 && self.tracking_weight.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tracking_weight",
                reason: format!("must be nonnegative and finite, got {}", self.tracking_weight),
            });
        }
        check_state(model, &self.initial_state)?;
        check_state(model, &self.reference_at(0.0)?)?;
        self.reference_at(self.horizon)?;
        Ok(())
    }

    /// `γ_r(t)`, rejecting times outside `[0, T]`.
    pub fn reference_at(&self, t: f64) -> Result<AdmissibleState> {
        let tol = 1e-9 * self.horizon.abs().max(1.0);
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::OutsideHorizon { t, horizon: self.horizon });
        }
        self.reference.sample(t.clamp(0.0, self.horizon))
    }

    /// `(q − q_r(t), v − v_r(t))` with angle components wrapped into `(−π, π]`.
    pub fn tracking_error(&self, model: &dyn SystemModel, t: f64, state: &AdmissibleState) -> Result<(DVector<f64>, DVector<f64>)> {
        let r = self.reference_at(t)?;
        Ok((configuration_error(model, &state.q, &r.q), &state.v - r.v))
    }

    /// `Φ = ½‖q(T) − q_r(T)‖²` (without the weight `ω`).
    pub fn terminal_cost(&self, model: &dyn SystemModel, state: &AdmissibleState) -> Result<f64> {
        let (dq, _) = self.tracking_error(model, self.horizon, state)?;
        Ok(0.5 * dq.norm_squared())
    }
}

/// Costate `(λ_i, μ_A)` conjugate to `(q^i, v^A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Costate {
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
}

impl Costate {
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            lambda: DVector::zeros(n),
            mu: DVector::zeros(r),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        AdmissibleState::new(self.lambda.clone(), self.mu.clone()).stacked()
    }

    pub fn from_stacked(y: &DVector<f64>, n: usize) -> Self {
        let s = AdmissibleState::from_stacked(y, n);
        Self { lambda: s.q, mu: s.v }
    }
}

/// Newton solver settings for single shooting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootingSettings {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub damping: f64,
    pub max_halvings: usize,
    /// Take a Levenberg–Marquardt step when the Newton line search stalls.
    pub levenberg_fallback: bool,
    pub inner_grid: TimeGrid,
}

impl ShootingSettings {
    /// Defaults with an RK4 flow step of `1e−3` over `[0, horizon]`.
    pub fn for_horizon(horizon: f64) -> Result<Self> {
        Ok(Self {
            newton_tol: 1e-8,
            max_iters: 50,
            fd_step: 1e-6,
            damping: 0.5,
            max_halvings: 30,
            levenberg_fallback: true,
            inner_grid: TimeGrid::with_step(horizon, 1e-3)?,
        })
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
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
        self.inner_grid.validate()?;
        if self.inner_grid.t0 != 0.0 || (self.inner_grid.tf - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return bad("inner_grid", "flow grid must span [0, T]");
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else if name == "epsilon" {
        Err(Error::SingularProblem(x))
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive, got {x}"),
        })
    }
}

/// `½(‖q − q_r‖² + ‖v − v_r‖² + ε‖u‖²)`, the tracking part scaled by the problem's tracking weight.
pub fn running_cost(model: &dyn SystemModel, problem: &TrackingProblem, t: f64, state: &AdmissibleState, u: &ControlVector) -> Result<f64> {
    let (dq, dv) = problem.tracking_error(model, t, state)?;
    Ok(0.5 * (problem.tracking_weight * (dq.norm_squared() + dv.norm_squared()) + problem.epsilon * u.norm_squared()))
}

/// Stationary control `u^A = −μ_A/(λ₀ ε)`.
pub fn optimal_control(mu: &DVector<f64>, epsilon: f64, lambda0: f64) -> Result<ControlVector> {
    check_positive("epsilon", epsilon)?;
    check_positive("lambda0", lambda0)?;
    Ok(mu * (-1.0 / (lambda0 * epsilon)))
}

/// `H = λ₀ C(q, v, u) + λ·ρ(q)v + μ·v̇(q, v, u)`.
pub fn hamiltonian(
    model: &dyn SystemModel,
    problem: &TrackingProblem,
    t: f64,
    state: &AdmissibleState,
    costate: &Costate,
    u: &ControlVector,
) -> Result<f64> {
    let (qdot, vdot) = dynamics_rhs(model, state, u)?;
    Ok(problem.lambda0 * running_cost(model, problem, t, state, u)? + costate.lambda.dot(&qdot) + costate.mu.dot(&vdot))
}

/// `H* = H(u*)`.
pub fn optimal_hamiltonian(model: &dyn SystemModel, problem: &TrackingProblem, t: f64, state: &AdmissibleState, costate: &Costate) -> Result<f64> {
    let u = optimal_control(&costate.mu, problem.epsilon, problem.lambda0)?;
    hamiltonian(model, problem, t, state, costate, &u)
}

/// Time derivatives of the state–costate system at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PmpDerivative {
    pub qdot: DVector<f64>,
    pub vdot: DVector<f64>,
    pub lambda_dot: DVector<f64>,
    pub mu_dot: DVector<f64>,
}

impl PmpDerivative {
    /// `[q̇, v̇, λ̇, μ̇]`.
    pub fn stacked(&self) -> DVector<f64> {
        let parts = [&self.qdot, &self.vdot, &self.lambda_dot, &self.mu_dot];
        DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
    }
}

/// `∂v̇^A/∂q^i` as an `(n−m) × n` matrix.
pub(crate) fn vdot_q_jac(model: &dyn SystemModel, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut jac = -model.potential_grad_jac(q);
    for (i, dgamma) in model.christoffel_jac(q).iter().enumerate() {
        let col = quadratic_term(dgamma, v);
        for a in 0..v.len() {
            jac[(a, i)] -= col[a];
        }
    }
    jac
}

/// `∂v̇^B/∂v^A = −(Γ^B_{AC} + Γ^B_{CA}) v^C` as an `(n−m) × (n−m)` matrix indexed `[(B, A)]`.
pub(crate) fn vdot_v_jac(model: &dyn SystemModel, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let gamma = model.christoffel(q);
    let r = v.len();
    DMatrix::from_fn(r, r, |b, a| -(0..r).map(|c| (gamma[(b, a, c)] + gamma[(b, c, a)]) * v[c]).sum::<f64>())
}

/// `∂(ρ(q) v)^j/∂q^i` as an `n × n` matrix indexed `[(j, i)]`.
pub(crate) fn rho_v_q_jac(model: &dyn SystemModel, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let dr = model.rho_jac(q);
    DMatrix::from_fn(n, n, |j, i| (0..v.len()).map(|a| dr[(j, a, i)] * v[a]).sum())
}

/// State and costate derivatives along the optimal flow.
pub fn pmp_rhs(model: &dyn SystemModel, problem: &TrackingProblem, t: f64, state: &AdmissibleState, costate: &Costate) -> Result<PmpDerivative> {
    check_state(model, state)?;
    if costate.lambda.len() != model.dim() || costate.mu.len() != model.rank() {
        return Err(Error::Dimension {
            field: "costate",
            expected: model.dim() + model.rank(),
            found: costate.lambda.len() + costate.mu.len(),
        });
    }
    let (q, v) = (&state.q, &state.v);
    let u = optimal_control(&costate.mu, problem.epsilon, problem.lambda0)?;
    let (qdot, vdot) = dynamics_rhs(model, state, &u)?;
    let (dq, dv) = problem.tracking_error(model, t, state)?;
    let l0 = problem.lambda0 * problem.tracking_weight;

    let lambda_dot = -(dq * l0
        + rho_v_q_jac(model, q, v).transpose() * &costate.lambda
        + vdot_q_jac(model, q, v).transpose() * &costate.mu);
    let mu_dot = -(dv * l0 + model.rho(q).transpose() * &costate.lambda + vdot_v_jac(model, q, v).transpose() * &costate.mu);

    if lambda_dot.iter().chain(mu_dot.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { stage: 0, t });
    }
    Ok(PmpDerivative {
        qdot,
        vdot,
        lambda_dot,
        mu_dot,
    })
}

fn split_flow_state(y: &DVector<f64>, n: usize, r: usize) -> (AdmissibleState, Costate) {
    let state = AdmissibleState::new(y.rows(0, n).into_owned(), y.rows(n, r).into_owned());
    let costate = Costate {
        lambda: y.rows(n + r, n).into_owned(),
        mu: y.rows(2 * n + r, r).into_owned(),
    };
    (state, costate)
}

fn join_flow_state(state: &AdmissibleState, costate: &Costate) -> DVector<f64> {
    let parts = [&state.q, &state.v, &costate.lambda, &costate.mu];
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Integrates the state–costate system from `(γ(0), α)` over `grid`.
pub fn flow(model: &dyn SystemModel, problem: &TrackingProblem, alpha: &Costate, grid: &TimeGrid) -> Result<Vec<(f64, DVector<f64>)>> {
    let (n, r) = (model.dim(), model.rank());
    let y0 = join_flow_state(&problem.initial_state, alpha);
    let field = |t: f64, y: &DVector<f64>| {
        let (s, c) = split_flow_state(y, n, r);
        match pmp_rhs(model, problem, t, &s, &c) {
            Ok(d) => d.stacked(),
            Err(_) => DVector::from_element(y.len(), f64::NAN),
        }
    };
    integrate(field, &y0, grid).map_err(|e| match e {
        Error::NonFinite { t, .. } => Error::Diverged { time: t },
        other => other,
    })
}

// Mayer transversality: λ(T) = λ₀ ω ∂Φ/∂q, μ(T) = 0.
fn terminal_residual(model: &dyn SystemModel, problem: &TrackingProblem, y_end: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, r) = (model.dim(), model.rank());
    let (state, costate) = split_flow_state(y_end, n, r);
    let (dq, dv) = problem.tracking_error(model, problem.horizon, &state)?;
    Ok(match problem.terminal {
        TerminalMode::Mayer => {
            let lam = costate.lambda - dq * (problem.lambda0 * problem.omega);
            AdmissibleState::new(lam, costate.mu).stacked()
        }
        TerminalMode::Hard => AdmissibleState::new(dq, dv).stacked(),
    })
}

/// Terminal residual of the shooting map at the initial costate `alpha`.
pub fn shooting_residual(model: &dyn SystemModel, problem: &TrackingProblem, alpha: &Costate, settings: &ShootingSettings) -> Result<DVector<f64>> {
    let traj = flow(model, problem, alpha, &settings.inner_grid)?;
    terminal_residual(model, problem, &traj.last().expect("grid has samples").1)
}

/// One Newton iteration record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NewtonRecord {
    pub iteration: usize,
    pub residual_norm: f64,
    /// Step length accepted by the line search (1 = full Newton step).
    pub step: f64,
    /// Levenberg–Marquardt parameter of a fallback step; 0 for a Newton step.
    pub levenberg: f64,
}

/// Sampled solution of the state–costate system.
#[derive(Clone, Debug)]
pub struct PmpTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<AdmissibleState>,
    pub costates: Vec<Costate>,
    pub controls: Vec<ControlVector>,
}

/// Cost split into its running and terminal parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub running: f64,
    pub terminal: f64,
    pub total: f64,
}

impl PmpTrajectory {
    fn from_samples(model: &dyn SystemModel, problem: &TrackingProblem, samples: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        let (n, r) = (model.dim(), model.rank());
        let mut out = Self {
            times: Vec::with_capacity(samples.len()),
            states: Vec::with_capacity(samples.len()),
            costates: Vec::with_capacity(samples.len()),
            controls: Vec::with_capacity(samples.len()),
        };
        for (t, y) in samples {
            let (s, c) = split_flow_state(&y, n, r);
            out.controls.push(optimal_control(&c.mu, problem.epsilon, problem.lambda0)?);
            out.times.push(t);
            out.states.push(s);
            out.costates.push(c);
        }
        Ok(out)
    }

    /// `∫ C dt` by the trapezoidal rule on the flow grid, plus `ω Φ` in Mayer mode.
    pub fn cost(&self, model: &dyn SystemModel, problem: &TrackingProblem) -> Result<CostBreakdown> {
        let mut values = Vec::with_capacity(self.times.len());
        for ((t, s), u) in self.times.iter().zip(&self.states).zip(&self.controls) {
            values.push(running_cost(model, problem, *t, s, u)?);
        }
        let running: f64 = self.times.windows(2).zip(values.windows(2)).map(|(t, c)| 0.5 * (t[1] - t[0]) * (c[0] + c[1])).sum();
        let terminal = match problem.terminal {
            TerminalMode::Mayer => problem.omega * problem.terminal_cost(model, self.states.last().expect("non-empty"))?,
            TerminalMode::Hard => 0.0,
        };
        Ok(CostBreakdown {
            running,
            terminal,
            total: running + terminal,
        })
    }

    /// `‖γ(T) − γ_r(T)‖` with wrapped angles.
    pub fn terminal_error(&self, model: &dyn SystemModel, problem: &TrackingProblem) -> Result<f64> {
        let (dq, dv) = problem.tracking_error(model, problem.horizon, self.states.last().expect("non-empty"))?;
        Ok((dq.norm_squared() + dv.norm_squared()).sqrt())
    }

    /// `‖q(T) − q_r(T)‖` with wrapped angles, the part penalised by the Mayer term.
    pub fn terminal_configuration_error(&self, model: &dyn SystemModel, problem: &TrackingProblem) -> Result<f64> {
        Ok(problem.tracking_error(model, problem.horizon, self.states.last().expect("non-empty"))?.0.norm())
    }

    /// `max_t ‖λ₀ ε u + μ‖`, the stationarity defect of the reported controls.
    pub fn stationarity_defect(&self, problem: &TrackingProblem) -> f64 {
        self.controls
            .iter()
            .zip(&self.costates)
            .map(|(u, c)| (u * (problem.lambda0 * problem.epsilon) + &c.mu).amax())
            .fold(0.0, f64::max)
    }

    /// `∞`-norm of the constraint residual `annihilator(q) q̇`, with `q̇` from
    /// fourth-order finite differences of the sampled configurations.
    pub fn constraint_residual(&self, model: &dyn SystemModel) -> Result<f64> {
        let qs: Vec<&DVector<f64>> = self.states.iter().map(|s| &s.q).collect();
        let qdots = fourth_order_derivative(&qs, &self.times)?;
        let mut worst = 0.0_f64;
        for (q, qd) in qs.iter().zip(&qdots) {
            worst = worst.max((model.annihilator(q) * qd).amax());
        }
        Ok(worst)
    }
}

/// Fourth-order finite-difference derivative of uniformly sampled vectors
/// (central in the interior, one-sided at the two ends of each side).
pub fn fourth_order_derivative(samples: &[&DVector<f64>], times: &[f64]) -> Result<Vec<DVector<f64>>> {
    let len = samples.len();
    if len < 5 {
        return Err(Error::TooFewSamples { needed: 5, got: len });
    }
    let h = (times[len - 1] - times[0]) / (len - 1) as f64;
    let y = |k: usize| samples[k];
    Ok((0..len)
        .map(|k| {
            let d = if k >= 2 && k + 2 < len {
                (y(k - 2) - y(k - 1) * 8.0 + y(k + 1) * 8.0 - y(k + 2)) / 12.0
            } else if k < 2 {
                (y(k) * -25.0 + y(k + 1) * 48.0 - y(k + 2) * 36.0 + y(k + 3) * 16.0 - y(k + 4) * 3.0) / 12.0
            } else {
                (y(k) * 25.0 - y(k - 1) * 48.0 + y(k - 2) * 36.0 - y(k - 3) * 16.0 + y(k - 4) * 3.0) / 12.0
            };
            d / h
        })
        .collect())
}

/// Result of [`solve_shooting`]. Nonconvergence is reported, not raised.
#[derive(Clone, Debug)]
pub struct ShootingOutcome {
    pub alpha: Costate,
    pub converged: bool,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: Vec<NewtonRecord>,
    pub trajectory: PmpTrajectory,
}

/// Damped Newton iteration on the shooting residual, starting from `alpha0`.
pub fn solve_shooting(model: &dyn SystemModel, problem: &TrackingProblem, alpha0: &Costate, settings: &ShootingSettings) -> Result<ShootingOutcome> {
    problem.validate(model)?;
    settings.validate(problem.horizon)?;
    let n = model.dim();
    if alpha0.lambda.len() != n || alpha0.mu.len() != model.rank() {
        return Err(Error::Dimension {
            field: "alpha0",
            expected: n + model.rank(),
            found: alpha0.lambda.len() + alpha0.mu.len(),
        });
    }
    let residual_at = |a: &DVector<f64>| shooting_residual(model, problem, &Costate::from_stacked(a, n), settings);

    let mut alpha = alpha0.stacked();
    let mut res = residual_at(&alpha)?;
    let mut norm = res.norm();
    let mut log = vec![NewtonRecord {
        iteration: 0,
        residual_norm: norm,
        step: 0.0,
        levenberg: 0.0,
    }];
    let mut converged = norm <= settings.newton_tol;

    for iteration in 1..=settings.max_iters {
        if converged {
            break;
        }
        let dim = alpha.len();
        let mut jac = DMatrix::zeros(res.len(), dim);
        for j in 0..dim {
            let mut a = alpha.clone();
            let step = settings.fd_step * alpha[j].abs().max(1.0);
            a[j] += step;
            let step = a[j] - alpha[j];
            jac.set_column(j, &((residual_at(&a)? - &res) / step));
        }
        let sv = jac.clone().svd(false, false).singular_values;
        let condition = sv.max() / sv.min();
        if !(condition <= 1e14) {
            return Err(Error::SingularJacobian { condition });
        }
        let delta = jac.clone().lu().solve(&(-&res)).ok_or(Error::SingularJacobian { condition: f64::INFINITY })?;

        let mut step = 1.0;
        let mut levenberg = 0.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial = &alpha + &delta * step;
            if let Ok(r) = residual_at(&trial) {
                let rn = r.norm();
                if rn.is_finite() && rn <= (1.0 - 1e-4 * step) * norm {
                    accepted = Some((trial, r, rn));
                    break;
                }
            }
            step *= settings.damping;
        }
        if accepted.is_none() && settings.levenberg_fallback {
            // the Newton direction is nearly orthogonal to the descent direction: bend it toward −Jᵀr
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &res;
            let mut nu = 1e-6 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
            for _ in 0..=2 * settings.max_halvings {
                let mut lhs = jtj.clone();
                for i in 0..dim {
                    lhs[(i, i)] += nu;
                }
                if let Some(d) = lhs.cholesky().map(|c| c.solve(&(-&grad))) {
                    let trial = &alpha + &d;
                    if let Ok(r) = residual_at(&trial) {
                        let rn = r.norm();
                        if rn.is_finite() && rn < norm {
                            accepted = Some((trial, r, rn));
                            step = 1.0;
                            levenberg = nu;
                            break;
                        }
                    }
                }
                nu *= 10.0;
            }
        }
        let Some((a, r, rn)) = accepted else {
            break;
        };
        alpha = a;
        res = r;
        norm = rn;
        log.push(NewtonRecord {
            iteration,
            residual_norm: norm,
            step,
            levenberg,
        });
        converged = norm <= settings.newton_tol;
    }

    let alpha = Costate::from_stacked(&alpha, n);
    let trajectory = PmpTrajectory::from_samples(model, problem, flow(model, problem, &alpha, &settings.inner_grid)?)?;
    Ok(ShootingOutcome {
        alpha,
        converged,
        residual: res,
        residual_norm: norm,
        iterations: log,
        trajectory,
    })
}

/// Whether the abnormal adjoint system (`λ₀ = 0`, hence `μ ≡ 0`, so
/// `λ·ρ ≡ 0` with `λ̇_i = −λ_j ∂_iρ^j_A v^A`) admits a nonzero solution along
/// a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbnormalDiagnostic {
    /// `min over unit initial λ ∈ ann(D) of (1/T ∫ ‖λ·ρ‖² dt)^{1/2}`.
    pub defect: f64,
    pub admits_nonzero: bool,
}

/// Propagates each annihilator direction along the sampled trajectory (Heun)
/// and measures how far the best combination stays from `λ·ρ = 0`.
pub fn abnormal_diagnostic(model: &dyn SystemModel, traj: &PmpTrajectory) -> Result<AbnormalDiagnostic> {
    if traj.states.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: traj.states.len(),
        });
    }
    let q0 = &traj.states[0].q;
    // orthonormal basis of the annihilator at q(0)
    let ann = model.annihilator(q0).transpose();
    let basis = ann.qr().q();
    let m = basis.ncols();
    let drift = |s: &AdmissibleState, lam: &DVector<f64>| -(rho_v_q_jac(model, &s.q, &s.v).transpose() * lam);

    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut lambdas: Vec<DVector<f64>> = (0..m).map(|a| basis.column(a).into_owned()).collect();
    let weight_and_add = |gram: &mut DMatrix<f64>, lambdas: &[DVector<f64>], s: &AdmissibleState, w: f64| {
        let rho = model.rho(&s.q);
        let rows: Vec<DVector<f64>> = lambdas.iter().map(|l| rho.transpose() * l).collect();
        for a in 0..m {
            for b in 0..m {
                gram[(a, b)] += w * rows[a].dot(&rows[b]);
            }
        }
    };
    for k in 0..traj.states.len() - 1 {
        let h = traj.times[k + 1] - traj.times[k];
        let (s0, s1) = (&traj.states[k], &traj.states[k + 1]);
        weight_and_add(&mut gram, &lambdas, s0, 0.5 * h);
        for l in lambdas.iter_mut() {
            let k1 = drift(s0, l);
            let pred = &*l + &k1 * h;
            let k2 = drift(s1, &pred);
            *l += (k1 + k2) * (0.5 * h);
        }
        weight_and_add(&mut gram, &lambdas, s1, 0.5 * h);
    }
    let span = traj.times.last().unwrap() - traj.times[0];
    let smallest = gram.symmetric_eigenvalues().min().max(0.0);
    let defect = (smallest / span).sqrt();
    Ok(AbnormalDiagnostic {
        defect,
        admits_nonzero: defect <= 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Particle, Sleigh, SleighParams};
    use approx::assert_relative_eq;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn case2() -> TrackingProblem {
        TrackingProblem::new(
            Reference::Affine {
                q0: dv(&[1.0, 0.0, 1.0]),
                q_rate: dv(&[0.0, 0.0, 1.0]),
                v0: dv(&[0.0, 1.0]),
                v_rate: dv(&[0.0, 0.0]),
            },
            AdmissibleState::from_slices(&[0.5, 0.2, 0.7], &[0.5, 0.4]),
            4.0,
            7.0,
        )
    }

    #[test]
    fn running_cost_arithmetic() {
        let p = TrackingProblem::new(Reference::constant(&AdmissibleState::from_slices(&[0.0; 3], &[0.0; 2])), AdmissibleState::from_slices(&[0.0; 3], &[0.0; 2]), 1.0, 9.0);
        let s = AdmissibleState::from_slices(&[2.0, 0.0, 0.0], &[1.0, 0.0]);
        let c = running_cost(&Particle, &p, 0.5, &s, &dv(&[1.0, 1.0])).unwrap();
        assert_eq!(c, 11.5);
        let at_ref = running_cost(&Particle, &p, 0.5, &p.reference_at(0.5).unwrap(), &dv(&[0.0, 0.0])).unwrap();
        assert_eq!(at_ref, 0.0);
        let small = running_cost(&Particle, &p, 0.0, &p.initial_state, &dv(&[1.0, 0.0])).unwrap();
        let big = running_cost(&Particle, &p, 0.0, &p.initial_state, &dv(&[2.0, 0.0])).unwrap();
        assert_eq!(big, 4.0 * small);
        assert!(matches!(running_cost(&Particle, &p, 1.5, &s, &dv(&[0.0, 0.0])), Err(Error::OutsideHorizon { .. })));
    }

    #[test]
    fn optimal_control_arithmetic() {
        assert_eq!(optimal_control(&dv(&[0.0, 0.0]), 1.0, 1.0).unwrap(), dv(&[0.0, 0.0]));
        let u = optimal_control(&dv(&[2.0, -3.0]), 9.0, 1.0).unwrap();
        assert_relative_eq!(u[0], -2.0 / 9.0, max_relative = 1e-15);
        assert_relative_eq!(u[1], 1.0 / 3.0, max_relative = 1e-15);
        let mu = dv(&[0.3, -1.7]);
        let u = optimal_control(&mu, 7.0, 2.0).unwrap();
        assert!((u * 14.0 + &mu).amax() < 1e-15);
        assert!(matches!(optimal_control(&mu, 0.0, 1.0), Err(Error::SingularProblem(_))));
        assert!(optimal_control(&mu, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_epsilon_is_rejected_with_singular_message() {
        let mut p = case2();
        p.epsilon = 0.0;
        let err = p.validate(&Particle).unwrap_err();
        assert!(err.to_string().contains("singular optimal control"));
    }

    #[test]
    fn hamiltonian_minimized_by_stationary_control() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = case2();
        for _ in 0..20 {
            let s = AdmissibleState::new(DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)), DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)));
            let c = Costate {
                lambda: DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)),
                mu: DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)),
            };
            let t = rng.random_range(0.0..4.0);
            let h_star = optimal_hamiltonian(&Particle, &p, t, &s, &c).unwrap();
            for _ in 0..50 {
                let u = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
                assert!(h_star <= hamiltonian(&Particle, &p, t, &s, &c, &u).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn particle_optimal_hamiltonian_at_y_zero() {
        let p = case2();
        let (x, z, v1, v2) = (0.3, -0.4, 1.1, -0.6);
        let s = AdmissibleState::from_slices(&[x, 0.0, z], &[v1, v2]);
        let c = Costate {
            lambda: dv(&[0.2, -0.5, 0.9]),
            mu: dv(&[1.5, -0.7]),
        };
        let t = 1.25;
        let (xr, yr, zr, v1r, v2r) = (1.0, 0.0, t + 1.0, 0.0, 1.0);
        let eps = 7.0;
        let expected = 0.5 * ((x - xr).powi(2) + yr * yr + (z - zr).powi(2) + (v1 - v1r).powi(2) + (v2 - v2r).powi(2)) - 0.0 + (-0.5) * v1 + 0.9 * v2
            - (1.5f64.powi(2) + 0.7f64.powi(2)) / (2.0 * eps);
        assert_relative_eq!(optimal_hamiltonian(&Particle, &p, t, &s, &c).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn costate_rhs_vanishes_on_reference() {
        let p = case2();
        let t = 2.0;
        let s = p.reference_at(t).unwrap();
        let d = pmp_rhs(&Particle, &p, t, &s, &Costate::zeros(3, 2)).unwrap();
        assert_eq!(d.lambda_dot.amax(), 0.0);
        assert_eq!(d.mu_dot.amax(), 0.0);
    }

    #[test]
    fn costate_rhs_is_minus_hamiltonian_gradient() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let sleigh = Sleigh::new(SleighParams::paper()).unwrap();
        let sleigh_problem = TrackingProblem::new(
            Reference::Rollout(Rollout::new(Arc::new(sleigh), AdmissibleState::from_slices(&[0.0, 0.5, 0.0], &[1.0 / 3.0, 1.0]), 5.0, 1e-3).unwrap()),
            AdmissibleState::from_slices(&[0.0, 0.0, 1.0], &[0.25, 1.0]),
            5.0,
            1.0,
        );
        let cases: [(&dyn SystemModel, TrackingProblem); 2] = [(&Particle, case2()), (&sleigh, sleigh_problem)];
        for (model, p) in &cases {
            for _ in 0..100 {
                let y = DVector::from_fn(5, |_, _| rng.random_range(-1.5..1.5));
                let c = Costate {
                    lambda: DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)),
                    mu: DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)),
                };
                let t = rng.random_range(0.5..3.5);
                let s = AdmissibleState::from_stacked(&y, 3);
                let d = pmp_rhs(*model, p, t, &s, &c).unwrap();
                let exact = AdmissibleState::new(d.lambda_dot, d.mu_dot).stacked();
                for k in 0..5 {
                    let step = 1e-6;
                    let (mut yp, mut ym) = (y.clone(), y.clone());
                    yp[k] += step;
                    ym[k] -= step;
                    let hp = optimal_hamiltonian(*model, p, t, &AdmissibleState::from_stacked(&yp, 3), &c).unwrap();
                    let hm = optimal_hamiltonian(*model, p, t, &AdmissibleState::from_stacked(&ym, 3), &c).unwrap();
                    let fd = -(hp - hm) / (2.0 * step);
                    assert!((exact[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{}: component {k}: {} vs {fd}", model.name(), exact[k]);
                }
            }
        }
    }

    #[test]
    fn zero_horizon_limit_of_residual() {
        let mut p = case2();
        p.horizon = 1e-9;
        let settings = ShootingSettings {
            inner_grid: TimeGrid::new(0.0, 1e-9, 1).unwrap(),
            ..ShootingSettings::for_horizon(1.0).unwrap()
        };
        let alpha = Costate {
            lambda: dv(&[0.1, 0.2, 0.3]),
            mu: dv(&[-0.4, 0.5]),
        };
        let res = shooting_residual(&Particle, &p, &alpha, &settings).unwrap();
        let r0 = p.reference_at(0.0).unwrap();
        let expected_lambda = &alpha.lambda - (&p.initial_state.q - &r0.q);
        for i in 0..3 {
            assert!((res[i] - expected_lambda[i]).abs() < 1e-8);
        }
        assert!((res[3] + 0.4).abs() < 1e-8 && (res[4] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn converged_start_returns_immediately() {
        let p = case2();
        let settings = ShootingSettings::for_horizon(4.0).unwrap();
        let first = solve_shooting(&Particle, &p, &Costate::zeros(3, 2), &settings).unwrap();
        assert!(first.converged);
        let again = solve_shooting(&Particle, &p, &first.alpha, &settings).unwrap();
        assert!(again.iterations.len() <= 2);
        assert!(again.converged);
        let mu_scale = first.trajectory.costates.iter().map(|c| c.mu.amax()).fold(1.0, f64::max);
        assert!(first.trajectory.stationarity_defect(&p) <= 4.0 * f64::EPSILON * mu_scale);
    }

    #[test]
    fn hard_mode_matches_reference_endpoint() {
        let mut p = case2().with_terminal(TerminalMode::Hard);
        p.horizon = 2.0;
        let settings = ShootingSettings::for_horizon(2.0).unwrap();
        let out = solve_shooting(&Particle, &p, &Costate::zeros(3, 2), &settings).unwrap();
        assert!(out.converged, "{:?}", out.iterations);
        assert!(out.trajectory.terminal_error(&Particle, &p).unwrap() <= 1e-8);
    }

    #[test]
    fn rollout_interpolation_hits_nodes_exactly() {
        let sleigh: Arc<dyn SystemModel> = Arc::new(Sleigh::new(SleighParams::paper()).unwrap());
        let r = Rollout::new(sleigh.clone(), AdmissibleState::from_slices(&[0.0, 0.5, 0.0], &[1.0 / 3.0, 1.0]), 5.0, 1e-3).unwrap();
        let fine = Rollout::new(sleigh, r.start().clone(), 5.0, 1e-4).unwrap();
        assert_eq!(r.sample(0.0).unwrap(), *r.start());
        for t in [0.05, 1.2345, 4.9999] {
            let a = r.sample(t).unwrap().stacked();
            let b = fine.sample(t).unwrap().stacked();
            assert!((a - b).amax() < 1e-10);
        }
        assert!(r.sample(5.1).is_err());
    }

    #[test]
    fn abnormal_diagnostic_particle() {
        let p = case2();
        let settings = ShootingSettings::for_horizon(4.0).unwrap();
        let out = solve_shooting(&Particle, &p, &Costate::zeros(3, 2), &settings).unwrap();
        let diag = abnormal_diagnostic(&Particle, &out.trajectory).unwrap();
        assert!(!diag.admits_nonzero, "{diag:?}");
        // at rest, λ = (1, 0, y) stays in the annihilator and λ·ρ ≡ 0
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let traj = PmpTrajectory {
            states: times.iter().map(|_| AdmissibleState::from_slices(&[0.0, 0.5, 0.0], &[0.0, 0.0])).collect(),
            costates: vec![Costate::zeros(3, 2); times.len()],
            controls: vec![DVector::zeros(2); times.len()],
            times,
        };
        assert!(abnormal_diagnostic(&Particle, &traj).unwrap().admits_nonzero);
    }
}
