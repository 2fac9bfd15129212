//! Midpoint discretization: discrete Lagrangian `L_d`, discrete constraint
//! `Ψ_d`, and their slot derivatives `D₁ … D₄` (slots `q_k, v_k, q_{k+1}, v_{k+1}`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lagrangian::{ocp_lagrangian, ocp_lagrangian_partials};
use crate::error::Result;
use crate::geometry::{AdmissibleState, SystemModel};
use crate::pmp::{rho_v_q_jac, TrackingProblem};

/// Velocity used inside `Ψ_d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiVelocity {
    /// `(v_k + v_{k+1})/2`, consistent with `q̇ = ρ(q) v`.
    #[default]
    Midpoint,
    /// `(v_{k+1} − v_k)/h`, the literal alternative.
    DifferenceQuotient,
}

/// How slot derivatives of `L_d` and `Ψ_d` are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotDerivatives {
    /// Chain rule through the model's derivative hooks.
    #[default]
    Exact,
    /// Central differences of `L_d` and `Ψ_d` with step `fd_step`.
    FiniteDifference,
}

/// One interval `[t_k, t_k + h]` of the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub t: f64,
    pub h: f64,
}

impl Interval {
    pub fn midpoint_time(&self) -> f64 {
        self.t + 0.5 * self.h
    }
}

fn midpoint(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    (a + b) * 0.5
}

/// `L_d = h ℒ(t_k + h/2, q_{k+1/2}, v_{k+1/2}, (v_{k+1} − v_k)/h)`.
pub fn discrete_lagrangian(model: &dyn SystemModel, problem: &TrackingProblem, z0: &AdmissibleState, z1: &AdmissibleState, iv: Interval) -> Result<f64> {
    let vdot = (&z1.v - &z0.v) / iv.h;
    Ok(iv.h * ocp_lagrangian(model, problem, iv.midpoint_time(), &midpoint(&z0.q, &z1.q), &midpoint(&z0.v, &z1.v), &vdot)?)
}

fn psi_velocity(z0: &AdmissibleState, z1: &AdmissibleState, h: f64, mode: PsiVelocity) -> DVector<f64> {
    match mode {
        PsiVelocity::Midpoint => midpoint(&z0.v, &z1.v),
        PsiVelocity::DifferenceQuotient => (&z1.v - &z0.v) / h,
    }
}

/// `Ψ_d = (q_{k+1} − q_k)/h − ρ(q_{k+1/2}) v̄`.
pub fn discrete_constraint(model: &dyn SystemModel, z0: &AdmissibleState, z1: &AdmissibleState, h: f64, mode: PsiVelocity) -> DVector<f64> {
    (&z1.q - &z0.q) / h - model.rho(&midpoint(&z0.q, &z1.q)) * psi_velocity(z0, z1, h, mode)
}

/// Slot gradients `(D₁, D₂, D₃, D₄)` of a scalar interval function.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotGradient {
    pub q0: DVector<f64>,
    pub v0: DVector<f64>,
    pub q1: DVector<f64>,
    pub v1: DVector<f64>,
}

impl SlotGradient {
    pub fn stacked(&self) -> DVector<f64> {
        let parts = [&self.q0, &self.v0, &self.q1, &self.v1];
        DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
    }
}

/// Slot Jacobians `(D₁Ψ_d, D₂Ψ_d, D₃Ψ_d, D₄Ψ_d)`, each with `n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotJacobian {
    pub q0: DMatrix<f64>,
    pub v0: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub v1: DMatrix<f64>,
}

impl SlotJacobian {
    /// `n × 2(n + r)` matrix `[D₁ D₂ D₃ D₄]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, r) = (self.q0.nrows(), self.v0.ncols());
        let mut m = DMatrix::zeros(n, 2 * (n + r));
        m.view_mut((0, 0), (n, n)).copy_from(&self.q0);
        m.view_mut((0, n), (n, r)).copy_from(&self.v0);
        m.view_mut((0, n + r), (n, n)).copy_from(&self.q1);
        m.view_mut((0, 2 * n + r), (n, r)).copy_from(&self.v1);
        m
    }
}

fn local_vector(z0: &AdmissibleState, z1: &AdmissibleState) -> DVector<f64> {
    let parts = [&z0.q, &z0.v, &z1.q, &z1.v];
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

fn split_local(x: &DVector<f64>, n: usize, r: usize) -> (AdmissibleState, AdmissibleState) {
    (
        AdmissibleState::new(x.rows(0, n).into_owned(), x.rows(n, r).into_owned()),
        AdmissibleState::new(x.rows(n + r, n).into_owned(), x.rows(2 * n + r, r).into_owned()),
    )
}

fn fd_step(x: f64, step: f64) -> f64 {
    step * x.abs().max(1.0)
}

/// Slot gradient of `L_d`.
pub fn lagrangian_slot_gradient(
    model: &dyn SystemModel,
    problem: &TrackingProblem,
    z0: &AdmissibleState,
    z1: &AdmissibleState,
    iv: Interval,
    mode: SlotDerivatives,
    step: f64,
) -> Result<SlotGradient> {
    let (n, r) = (model.dim(), model.rank());
    match mode {
        SlotDerivatives::Exact => {
            let h = iv.h;
            let vdot = (&z1.v - &z0.v) / h;
            let p = ocp_lagrangian_partials(model, problem, iv.midpoint_time(), &midpoint(&z0.q, &z1.q), &midpoint(&z0.v, &z1.v), &vdot)?;
            let dq = &p.dq * (0.5 * h);
            let dv = &p.dv * (0.5 * h);
            Ok(SlotGradient {
                q0: dq.clone(),
                v0: &dv - &p.dvdot,
                q1: dq,
                v1: &dv + &p.dvdot,
            })
        }
        SlotDerivatives::FiniteDifference => {
            let x = local_vector(z0, z1);
            let mut g = DVector::zeros(x.len());
            for j in 0..x.len() {
                let s = fd_step(x[j], step);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += s;
                xm[j] -= s;
                let (a, b) = split_local(&xp, n, r);
                let (c, d) = split_local(&xm, n, r);
                g[j] = (discrete_lagrangian(model, problem, &a, &b, iv)? - discrete_lagrangian(model, problem, &c, &d, iv)?) / (xp[j] - xm[j]);
            }
            let (a, b) = split_local(&g, n, r);
            Ok(SlotGradient {
                q0: a.q,
                v0: a.v,
                q1: b.q,
                v1: b.v,
            })
        }
    }
}

/// Slot Jacobians of `Ψ_d`.
pub fn constraint_slot_jacobian(
    model: &dyn SystemModel,
    z0: &AdmissibleState,
    z1: &AdmissibleState,
    h: f64,
    psi: PsiVelocity,
    mode: SlotDerivatives,
    step: f64,
) -> SlotJacobian {
    let (n, r) = (model.dim(), model.rank());
    match mode {
        SlotDerivatives::Exact => {
            let qm = midpoint(&z0.q, &z1.q);
            let vbar = psi_velocity(z0, z1, h, psi);
            let half_jac = rho_v_q_jac(model, &qm, &vbar) * 0.5;
            let eye = DMatrix::<f64>::identity(n, n) / h;
            let rho = model.rho(&qm);
            let (dv0, dv1) = match psi {
                PsiVelocity::Midpoint => (&rho * -0.5, &rho * -0.5),
                PsiVelocity::DifferenceQuotient => (&rho / h, &rho / -h),
            };
            SlotJacobian {
                q0: -&eye - &half_jac,
                v0: dv0,
                q1: &eye - &half_jac,
                v1: dv1,
            }
        }
        SlotDerivatives::FiniteDifference => {
            let x = local_vector(z0, z1);
            let mut jac = DMatrix::zeros(n, x.len());
            for j in 0..x.len() {
                let s = fd_step(x[j], step);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += s;
                xm[j] -= s;
                let (a, b) = split_local(&xp, n, r);
                let (c, d) = split_local(&xm, n, r);
                let col = (discrete_constraint(model, &a, &b, h, psi) - discrete_constraint(model, &c, &d, h, psi)) / (xp[j] - xm[j]);
                jac.set_column(j, &col);
            }
            SlotJacobian {
                q0: jac.columns(0, n).into_owned(),
                v0: jac.columns(n, r).into_owned(),
                q1: jac.columns(n + r, n).into_owned(),
                v1: jac.columns(2 * n + r, r).into_owned(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmp::Reference;
    use crate::systems::{Particle, Sleigh, SleighParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn case1() -> TrackingProblem {
        TrackingProblem::new(
            Reference::Affine {
                q0: dv(&[0.0, 1.0, 0.0]),
                q_rate: dv(&[-1.0, 0.0, 1.0]),
                v0: dv(&[0.0, 1.0]),
                v_rate: dv(&[0.0, 0.0]),
            },
            AdmissibleState::from_slices(&[2.0, 3.0, 2.0], &[0.5, 0.4]),
            5.0,
            9.0,
        )
    }

    #[test]
    fn constraint_examples() {
        let h = 0.1;
        let z = AdmissibleState::from_slices(&[0.3, -0.4, 1.0], &[0.0, 0.0]);
        assert_eq!(discrete_constraint(&Particle, &z, &z, h, PsiVelocity::Midpoint).amax(), 0.0);
        let z0 = AdmissibleState::from_slices(&[0.0, 1.0, 0.0], &[0.0, 1.0]);
        let z1 = AdmissibleState::from_slices(&[-h, 1.0, h], &[0.0, 1.0]);
        assert!(discrete_constraint(&Particle, &z0, &z1, h, PsiVelocity::Midpoint).amax() < 1e-15);
        // moving x alone by δ violates the first row by δ/h
        let z1 = AdmissibleState::from_slices(&[-h + 0.02, 1.0, h], &[0.0, 1.0]);
        let psi = discrete_constraint(&Particle, &z0, &z1, h, PsiVelocity::Midpoint);
        assert!((psi[0] - 0.2).abs() < 1e-14 && psi[1].abs() < 1e-15 && psi[2].abs() < 1e-15);
    }

    #[test]
    fn discrete_lagrangian_is_h_times_midpoint_lagrangian() {
        let p = case1();
        let iv = Interval { t: 1.3, h: 0.1 };
        let z0 = AdmissibleState::from_slices(&[0.1, 0.9, 1.2], &[0.3, 0.8]);
        let z1 = AdmissibleState::from_slices(&[0.05, 0.95, 1.3], &[0.35, 0.85]);
        let direct = 0.1 * ocp_lagrangian(&Particle, &p, 1.35, &dv(&[0.075, 0.925, 1.25]), &dv(&[0.325, 0.825]), &dv(&[0.5, 0.5])).unwrap();
        let ld = discrete_lagrangian(&Particle, &p, &z0, &z1, iv).unwrap();
        assert!((ld - direct).abs() <= 1e-15 * direct.abs().max(1.0));
    }

    #[test]
    fn action_quadrature_is_second_order() {
        // ∫₀¹ ℒ along a smooth curve: midpoint sum converges at order 2
        let p = case1();
        let curve = |t: f64| AdmissibleState::from_slices(&[t.sin(), 1.0 + 0.3 * t * t, t.cos()], &[0.2 * t, 1.0 - t * t]);
        let action = |steps: usize| {
            let h = 1.0 / steps as f64;
            (0..steps)
                .map(|k| discrete_lagrangian(&Particle, &p, &curve(k as f64 * h), &curve((k + 1) as f64 * h), Interval { t: k as f64 * h, h }).unwrap())
                .sum::<f64>()
        };
        let (a, b, c) = (action(20), action(40), action(80));
        let ratio = (a - b) / (b - c);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn midpoint_self_adjointness() {
        let p = case1();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let z0 = AdmissibleState::new(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)), DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
            let z1 = AdmissibleState::new(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)), DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
            let h = 0.125;
            let t = 2.0;
            let fwd = discrete_lagrangian(&Particle, &p, &z0, &z1, Interval { t, h }).unwrap();
            let back = discrete_lagrangian(&Particle, &p, &z1, &z0, Interval { t: t + h, h: -h }).unwrap();
            assert_eq!(fwd, -back);
        }
    }

    #[test]
    fn exact_slot_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = Sleigh::new(SleighParams::paper()).unwrap();
        let sleigh_problem = TrackingProblem::new(
            Reference::constant(&AdmissibleState::from_slices(&[0.0, 0.5, 0.0], &[1.0 / 3.0, 1.0])),
            AdmissibleState::from_slices(&[0.0, 0.0, 1.0], &[0.25, 1.0]),
            5.0,
            1.0,
        );
        let models: [(&dyn SystemModel, TrackingProblem); 2] = [(&Particle, case1()), (&s, sleigh_problem)];
        for (model, p) in &models {
            for psi in [PsiVelocity::Midpoint, PsiVelocity::DifferenceQuotient] {
                for _ in 0..10 {
                    let z0 = AdmissibleState::new(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)), DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
                    let z1 = AdmissibleState::new(&z0.q + DVector::from_fn(3, |_, _| rng.random_range(-0.1..0.1)), &z0.v + DVector::from_fn(2, |_, _| rng.random_range(-0.1..0.1)));
                    let iv = Interval { t: 1.0, h: 0.1 };
                    let exact = lagrangian_slot_gradient(*model, p, &z0, &z1, iv, SlotDerivatives::Exact, 1e-6).unwrap().stacked();
                    let fd = lagrangian_slot_gradient(*model, p, &z0, &z1, iv, SlotDerivatives::FiniteDifference, 1e-6).unwrap().stacked();
                    assert!((&exact - &fd).amax() <= 1e-5 * fd.amax().max(1.0));
                    let je = constraint_slot_jacobian(*model, &z0, &z1, 0.1, psi, SlotDerivatives::Exact, 1e-6).stacked();
                    let jf = constraint_slot_jacobian(*model, &z0, &z1, 0.1, psi, SlotDerivatives::FiniteDifference, 1e-6).stacked();
                    assert!((&je - &jf).amax() <= 1e-6 * jf.amax().max(1.0));
                }
            }
        }
    }
}
