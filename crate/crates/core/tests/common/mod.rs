#![allow(dead_code)]

use std::sync::Arc;

use nhtrack::geometry::SystemModel;
use nhtrack::pmp::{Costate, Reference, Rollout, TerminalMode, TrackingProblem};
use nhtrack::systems::{Sleigh, SleighParams};
use nhtrack::{AdmissibleState, DVector};

pub fn dv(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn affine(q0: &[f64], q_rate: &[f64], v0: &[f64], v_rate: &[f64]) -> Reference {
    Reference::Affine {
        q0: dv(q0),
        q_rate: dv(q_rate),
        v0: dv(v0),
        v_rate: dv(v_rate),
    }
}

/// Particle Case 1: γ(0) = (2, 3, 2; 0.5, 0.4), γ_r(t) = (−t, 1, t; 0, 1), T = 5, ε = 9.
pub fn particle_case1() -> TrackingProblem {
    TrackingProblem::new(
        affine(&[0.0, 1.0, 0.0], &[-1.0, 0.0, 1.0], &[0.0, 1.0], &[0.0, 0.0]),
        AdmissibleState::from_slices(&[2.0, 3.0, 2.0], &[0.5, 0.4]),
        5.0,
        9.0,
    )
}

/// Particle Case 2: γ(0) = (0.5, 0.2, 0.7; 0.5, 0.4), γ_r(t) = (1, 0, t + 1; 0, 1), T = 4, ε = 7.
pub fn particle_case2() -> TrackingProblem {
    TrackingProblem::new(
        affine(&[1.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 1.0], &[0.0, 0.0]),
        AdmissibleState::from_slices(&[0.5, 0.2, 0.7], &[0.5, 0.4]),
        4.0,
        7.0,
    )
}

pub fn paper_sleigh() -> Arc<dyn SystemModel> {
    Arc::new(Sleigh::new(SleighParams::paper()).unwrap())
}

/// The sleigh run: γ(0) = (0, 0, 4π/3; 1/4, 1) tracking the uncontrolled
/// motion from (0, 1/2, 0; 1/3, 1), T = 5, ε = 1, both ends fixed.
pub fn sleigh_run(model: &Arc<dyn SystemModel>) -> TrackingProblem {
    let start = AdmissibleState::from_slices(&[0.0, 0.5, 0.0], &[1.0 / 3.0, 1.0]);
    let rollout = Rollout::new(model.clone(), start, 5.0, 1e-3).unwrap();
    TrackingProblem::new(
        Reference::Rollout(rollout),
        AdmissibleState::from_slices(&[0.0, 0.0, 4.0 * std::f64::consts::PI / 3.0], &[0.25, 1.0]),
        5.0,
        1.0,
    )
    .with_terminal(TerminalMode::Hard)
}

/// Particle state and adjoint equations written out by hand from
/// `H* = λ₀/2 (|Δq|² + |Δv|²) − λ₁ y v² + λ₂ v¹ + λ₃ v² − |μ|²/(2λ₀ε) − μ₂ v¹v² y/(1+y²)`.
/// Returns `[ẋ, ẏ, ż, v̇¹, v̇², λ̇₁, λ̇₂, λ̇₃, μ̇₁, μ̇₂]`.
pub fn particle_flow_by_hand(l0: f64, eps: f64, s: &AdmissibleState, r: &AdmissibleState, c: &Costate) -> [f64; 10] {
    let (x, y, z) = (s.q[0], s.q[1], s.q[2]);
    let (v1, v2) = (s.v[0], s.v[1]);
    let (xr, yr, zr) = (r.q[0], r.q[1], r.q[2]);
    let (v1r, v2r) = (r.v[0], r.v[1]);
    let (l1, l2, l3) = (c.lambda[0], c.lambda[1], c.lambda[2]);
    let (m1, m2) = (c.mu[0], c.mu[1]);
    let f = y / (1.0 + y * y);
    let df = (1.0 - y * y) / ((1.0 + y * y) * (1.0 + y * y));
    [
        -y * v2,
        v1,
        v2,
        -m1 / (l0 * eps),
        -m2 / (l0 * eps) - f * v1 * v2,
        -l0 * (x - xr),
        l1 * v2 - l0 * (y - yr) + v1 * v2 * m2 * df,
        -l0 * (z - zr),
        -l2 - l0 * (v1 - v1r) + m2 * f * v2,
        -l3 + l1 * y - l0 * (v2 - v2r) + m2 * f * v1,
    ]
}

/// Sleigh state and adjoint equations written out by hand, with
/// `η = a√m/(J + ma²)`. Same output layout as the particle version.
pub fn sleigh_flow_by_hand(p: SleighParams, l0: f64, eps: f64, s: &AdmissibleState, r: &AdmissibleState, c: &Costate) -> [f64; 10] {
    let (m, j, a) = (p.mass, p.inertia, p.offset);
    let eta = a * m.sqrt() / (j + m * a * a);
    let (x1, x2, th) = (s.q[0], s.q[1], s.q[2]);
    let (v1, v2) = (s.v[0], s.v[1]);
    let (l1, l2, l3) = (c.lambda[0], c.lambda[1], c.lambda[2]);
    let (m1, m2) = (c.mu[0], c.mu[1]);
    let (sin, cos) = th.sin_cos();
    [
        cos / m.sqrt() * v2,
        sin / m.sqrt() * v2,
        v1 / (j + m * a * a).sqrt(),
        -eta * v1 * v2 - m1 / (l0 * eps),
        eta * v1 * v1 - m2 / (l0 * eps),
        -l0 * (x1 - r.q[0]),
        -l0 * (x2 - r.q[1]),
        l0 * (r.q[2] - th) + l1 * sin / m.sqrt() * v2 - l2 * cos / m.sqrt() * v2,
        -l0 * (v1 - r.v[0]) - l3 / (j + m * a * a).sqrt() + m1 * v2 * eta - m2 * v1 * 2.0 * eta,
        -l0 * (v2 - r.v[1]) - l1 * cos / m.sqrt() - l2 * sin / m.sqrt() + m1 * v1 * eta,
    ]
}
