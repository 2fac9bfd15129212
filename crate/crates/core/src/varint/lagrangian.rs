//! The continuous second-order Lagrangian `ℒ(q, v, v̇)` on `D⁽²⁾` and its
//! optimality conditions.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{check_state, quadratic_term, AdmissibleState, SystemModel};
use crate::pmp::{rho_v_q_jac, vdot_q_jac, vdot_v_jac, TrackingProblem};

/// Control reconstructed from an acceleration: `u = v̇ + Γ(q)(v, v) + ∇V`.
pub fn reconstructed_control(model: &dyn SystemModel, q: &DVector<f64>, v: &DVector<f64>, vdot: &DVector<f64>) -> DVector<f64> {
    vdot + quadratic_term(&model.christoffel(q), v) + model.potential_grad(q)
}

fn check_point(model: &dyn SystemModel, q: &DVector<f64>, v: &DVector<f64>, vdot: &DVector<f64>) -> Result<()> {
    check_state(model, &AdmissibleState::new(q.clone(), v.clone()))?;
    if vdot.len() != model.rank() {
        return Err(Error::Dimension {
            field: "vdot",
            expected: model.rank(),
            found: vdot.len(),
        });
    }
    Ok(())
}

/// `ℒ = λ₀ C(q, v, u(q, v, v̇))`.
pub fn ocp_lagrangian(model: &dyn SystemModel, problem: &TrackingProblem, t: f64, q: &DVector<f64>, v: &DVector<f64>, vdot: &DVector<f64>) -> Result<f64> {
    check_point(model, q, v, vdot)?;
    let (dq, dv) = problem.tracking_error(model, t, &AdmissibleState::new(q.clone(), v.clone()))?;
    let w = reconstructed_control(model, q, v, vdot);
    Ok(0.5 * problem.lambda0 * (problem.tracking_weight * (dq.norm_squared() + dv.norm_squared()) + problem.epsilon * w.norm_squared()))
}

/// `ℒ` together with its first partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianPartials {
    pub value: f64,
    pub dq: DVector<f64>,
    pub dv: DVector<f64>,
    pub dvdot: DVector<f64>,
}

/// Exact partials of `ℒ`, assembled from the model's derivative hooks.
pub fn ocp_lagrangian_partials(
    model: &dyn SystemModel,
    problem: &TrackingProblem,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    vdot: &DVector<f64>,
) -> Result<LagrangianPartials> {
    check_point(model, q, v, vdot)?;
    let (dq, dv) = problem.tracking_error(model, t, &AdmissibleState::new(q.clone(), v.clone()))?;
    let w = reconstructed_control(model, q, v, vdot);
    let (l0, wt, eps) = (problem.lambda0, problem.tracking_weight, problem.epsilon);
    let value = 0.5 * l0 * (wt * (dq.norm_squared() + dv.norm_squared()) + eps * w.norm_squared());
    // ∂w/∂q = −∂v̇/∂q and ∂w/∂v = −∂v̇/∂v at fixed acceleration
    let grad_q = (&dq * wt - vdot_q_jac(model, q, v).transpose() * &w * eps) * l0;
    let grad_v = (&dv * wt - vdot_v_jac(model, q, v).transpose() * &w * eps) * l0;
    Ok(LagrangianPartials {
        value,
        dq: grad_q,
        dv: grad_v,
        dvdot: w * (l0 * eps),
    })
}

/// A point of a smooth curve with its derivatives and the multiplier of the
/// admissibility constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct JetPoint {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub v: DVector<f64>,
    pub vdot: DVector<f64>,
    pub vddot: DVector<f64>,
    pub lambda: DVector<f64>,
    pub lambda_dot: DVector<f64>,
}

/// Residual blocks of the second-order optimality system
///
/// ```text
/// λ̇_i + ∂ℒ/∂q^i + λ_j ∂_iρ^j_A v^A = 0
/// q̇ − ρ(q) v = 0
/// d/dt ∂ℒ/∂v̇^A − ∂ℒ/∂v^A − ρ^i_A λ_i = 0
/// ```
///
/// for the augmented Lagrangian `ℒ − λ·(q̇ − ρ v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalityResidual {
    pub costate: DVector<f64>,
    pub admissibility: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl OptimalityResidual {
    pub fn stacked(&self) -> DVector<f64> {
        let parts = [&self.costate, &self.admissibility, &self.velocity];
        DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
    }
}

/// Pointwise optimality residual with all time derivatives supplied.
pub fn optimality_residual_at(model: &dyn SystemModel, problem: &TrackingProblem, t: f64, p: &JetPoint) -> Result<OptimalityResidual> {
    let parts = ocp_lagrangian_partials(model, problem, t, &p.q, &p.v, &p.vdot)?;
    let rho = model.rho(&p.q);
    let costate = &p.lambda_dot + &parts.dq + rho_v_q_jac(model, &p.q, &p.v).transpose() * &p.lambda;
    let admissibility = &p.qdot - &rho * &p.v;
    // d/dt (λ₀ ε w) with w = v̇ + Γ(q)(v, v) + ∇V
    let w_dot = &p.vddot - vdot_q_jac(model, &p.q, &p.v) * &p.qdot - vdot_v_jac(model, &p.q, &p.v) * &p.vdot;
    let velocity = w_dot * (problem.lambda0 * problem.epsilon) - &parts.dv - rho.transpose() * &p.lambda;
    Ok(OptimalityResidual {
        costate,
        admissibility,
        velocity,
    })
}

/// Optimality residual of a uniformly sampled trajectory, with time
/// derivatives from second-order central differences, stacked over the
/// interior samples.
pub fn continuous_optimality_residual(
    model: &dyn SystemModel,
    problem: &TrackingProblem,
    times: &[f64],
    states: &[AdmissibleState],
    lambdas: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let len = times.len();
    if len < 3 || states.len() != len || lambdas.len() != len {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: len.min(states.len()).min(lambdas.len()),
        });
    }
    let mut out = Vec::new();
    for k in 1..len - 1 {
        let h = 0.5 * (times[k + 1] - times[k - 1]);
        let (a, b, c) = (&states[k - 1], &states[k], &states[k + 1]);
        let point = JetPoint {
            q: b.q.clone(),
            qdot: (&c.q - &a.q) / (2.0 * h),
            v: b.v.clone(),
            vdot: (&c.v - &a.v) / (2.0 * h),
            vddot: (&c.v - &b.v * 2.0 + &a.v) / (h * h),
            lambda: lambdas[k].clone(),
            lambda_dot: (&lambdas[k + 1] - &lambdas[k - 1]) / (2.0 * h),
        };
        out.extend(optimality_residual_at(model, problem, times[k], &point)?.stacked().iter().copied());
    }
    Ok(DVector::from_vec(out))
}
