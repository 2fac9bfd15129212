//! Independent oracles for the geometry, shooting and discrete solvers.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use nhtrack::geometry::christoffel_from_structure;
use nhtrack::ode::TimeGrid;
use nhtrack::pmp::{shooting_residual, Costate, ShootingSettings, TerminalMode};
use nhtrack::systems::Particle;
use nhtrack::varint::{del_residual, regularity_check, solve_del, DelSettings, DelSystem, Interval};
use nhtrack::{AdmissibleState, DVector, Tensor3};

#[test]
fn christoffel_formula_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for r in 1..=4 {
        let mut c = vec![vec![vec![0.0; r]; r]; r];
        for up in 0..r {
            for a in 0..r {
                for b in a + 1..r {
                    let x: f64 = rng.random_range(-2.0..2.0);
                    c[up][a][b] = x;
                    c[up][b][a] = -x;
                }
            }
        }
        let structure = Tensor3::from_fn(r, r, r, |up, a, b| c[up][a][b]);
        let gamma = christoffel_from_structure(&structure).unwrap();
        for up in 0..r {
            for a in 0..r {
                for b in 0..r {
                    let want = 0.5 * (c[b][up][a] + c[a][up][b] + c[up][a][b]);
                    assert_eq!(gamma[(up, a, b)], want, "Γ^{up}_{a}{b}");
                }
            }
        }
    }
}

/// Classic RK4 on the hand-written particle state–costate system.
fn hand_flow_residual(l0: f64, eps: f64, omega: f64, steps: usize) -> [f64; 5] {
    let problem = particle_case2();
    let h = problem.horizon / steps as f64;
    let mut y = [0.5, 0.2, 0.7, 0.5, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0];
    let rhs = |t: f64, y: &[f64; 10]| {
        let s = AdmissibleState::from_slices(&y[0..3], &y[3..5]);
        let c = Costate {
            lambda: DVector::from_column_slice(&y[5..8]),
            mu: DVector::from_column_slice(&y[8..10]),
        };
        let r = AdmissibleState::from_slices(&[1.0, 0.0, t + 1.0], &[0.0, 1.0]);
        particle_flow_by_hand(l0, eps, &s, &r, &c)
    };
    let axpy = |y: &[f64; 10], k: &[f64; 10], a: f64| std::array::from_fn::<f64, 10, _>(|i| y[i] + a * k[i]);
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + h / 2.0, &axpy(&y, &k1, h / 2.0));
        let k3 = rhs(t + h / 2.0, &axpy(&y, &k2, h / 2.0));
        let k4 = rhs(t + h, &axpy(&y, &k3, h));
        y = std::array::from_fn(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
    }
    let qr = [1.0, 0.0, problem.horizon + 1.0];
    [y[5] - omega * (y[0] - qr[0]), y[6] - omega * (y[1] - qr[1]), y[7] - omega * (y[2] - qr[2]), y[8], y[9]]
}

#[test]
fn case2_residual_at_zero_costate_matches_hand_flow() {
    let problem = particle_case2();
    let settings = ShootingSettings::for_horizon(4.0).unwrap();
    let got = shooting_residual(&Particle, &problem, &Costate::zeros(3, 2), &settings).unwrap();
    let want = hand_flow_residual(1.0, 7.0, 1.0, 4000);
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
    // Recorded from the hand flow.
    let recorded = [2.6558832129454113, -7.868193886274677, 11.752460419935462, 4.364646236819338, 3.8455347471153365];
    for (a, b) in got.iter().zip(recorded) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a:?} vs {b:?}");
    }
}

/// Gradient of the particle `L_d` over one interval, differentiated by hand:
/// `[∂/∂q_a, ∂/∂v_a, ∂/∂q_b, ∂/∂v_b]`.
fn particle_ld_gradient(eps: f64, h: f64, t_mid: f64, a: &AdmissibleState, b: &AdmissibleState) -> [f64; 10] {
    let qm: Vec<f64> = (0..3).map(|i| 0.5 * (a.q[i] + b.q[i])).collect();
    let vm = [0.5 * (a.v[0] + b.v[0]), 0.5 * (a.v[1] + b.v[1])];
    let w = [(b.v[0] - a.v[0]) / h, (b.v[1] - a.v[1]) / h];
    let qr = [1.0, 0.0, t_mid + 1.0];
    let vr = [0.0, 1.0];
    let y = qm[1];
    let f = y / (1.0 + y * y);
    let df = (1.0 - y * y) / ((1.0 + y * y) * (1.0 + y * y));
    let u = [w[0], w[1] + f * vm[0] * vm[1]];
    let dq = |i: usize| h * 0.5 * (qm[i] - qr[i]) + if i == 1 { h * eps * u[1] * 0.5 * df * vm[0] * vm[1] } else { 0.0 };
    let dv = |i: usize, sign: f64| {
        let coupling = if i == 0 { u[1] * 0.5 * f * vm[1] } else { u[1] * 0.5 * f * vm[0] };
        h * 0.5 * (vm[i] - vr[i]) + h * eps * (u[i] * sign / h + coupling)
    };
    [dq(0), dq(1), dq(2), dv(0, -1.0), dv(1, -1.0), dq(0), dq(1), dq(2), dv(0, 1.0), dv(1, 1.0)]
}

/// Gradient of `λ·Ψ_d` with `Ψ_d = (q_b − q_a)/h − ρ(q_m) v_m`, same layout.
fn particle_psi_gradient(h: f64, a: &AdmissibleState, b: &AdmissibleState, l: &DVector<f64>) -> [f64; 10] {
    let y = 0.5 * (a.q[1] + b.q[1]);
    let v2 = 0.5 * (a.v[1] + b.v[1]);
    let dq = |sign: f64| [sign * l[0] / h, sign * l[1] / h + 0.5 * l[0] * v2, sign * l[2] / h];
    let dv = [-0.5 * l[1], -0.5 * (l[2] - y * l[0])];
    let (qa, qb) = (dq(-1.0), dq(1.0));
    [qa[0], qa[1], qa[2], dv[0], dv[1], qb[0], qb[1], qb[2], dv[0], dv[1]]
}

#[test]
fn two_interval_residual_matches_hand_expansion() {
    let mut problem = particle_case2().with_terminal(TerminalMode::Hard);
    problem.horizon = 0.5;
    let h = 0.25;
    let settings = DelSettings::default();
    let sys = DelSystem::new(&Particle, &problem, TimeGrid::new(0.0, 0.5, 2).unwrap(), settings).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let mut traj = sys.initial_trajectory().unwrap();
        traj.nodes[1] = AdmissibleState::new(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)), DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
        traj.multipliers[1] = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let r = del_residual(&Particle, &problem, &traj, &settings).unwrap();
        assert_eq!(r.len(), 8);

        let (z0, z1, z2) = (&traj.nodes[0], &traj.nodes[1], &traj.nodes[2]);
        let left = particle_ld_gradient(7.0, h, 0.125, z0, z1);
        let right = particle_ld_gradient(7.0, h, 0.375, z1, z2);
        let psi = particle_psi_gradient(h, z1, z2, &traj.multipliers[1]);
        let node = sys.layout.node(1).unwrap();
        for i in 0..5 {
            let want = left[5 + i] + right[i] + psi[i];
            assert!((r[node + i] - want).abs() <= 1e-12 * want.abs().max(1.0), "row {i}: {} vs {want}", r[node + i]);
        }
        let ym = 0.5 * (z1.q[1] + z2.q[1]);
        let vm = [0.5 * (z1.v[0] + z2.v[0]), 0.5 * (z1.v[1] + z2.v[1])];
        let psi_value = [(z2.q[0] - z1.q[0]) / h + ym * vm[1], (z2.q[1] - z1.q[1]) / h - vm[0], (z2.q[2] - z1.q[2]) / h - vm[1]];
        let m = sys.layout.multiplier(1).unwrap();
        for j in 0..3 {
            assert!((r[m + j] - psi_value[j]).abs() <= 1e-12 * psi_value[j].abs().max(1.0));
        }
    }
}

#[test]
fn cyclic_coordinates_conserve_their_multipliers() {
    let mut problem = particle_case2().with_terminal(TerminalMode::Hard);
    problem.horizon = 1.0;
    problem.tracking_weight = 0.0;
    let settings = DelSettings {
        enforce_first_interval: true,
        ..DelSettings::default()
    };
    let out = solve_del(&Particle, &problem, TimeGrid::new(0.0, 1.0, 20).unwrap(), &settings).unwrap();
    assert!(out.converged);
    let first = &out.trajectory.multipliers[0];
    assert!(first[0].abs() > 1e-3 && first[2].abs() > 1e-3, "non-trivial momenta: {first}");
    for l in &out.trajectory.multipliers {
        assert!((l[0] - first[0]).abs() <= 1e-9, "{} vs {}", l[0], first[0]);
        assert!((l[2] - first[2]).abs() <= 1e-9, "{} vs {}", l[2], first[2]);
    }
}

#[test]
fn particle_is_regular_at_random_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut problem = particle_case2();
    problem.epsilon = 1.0;
    let settings = DelSettings::default();
    for _ in 0..100 {
        let mut state = || AdmissibleState::new(DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)), DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)));
        let (z0, z1) = (state(), state());
        let l = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let report = regularity_check(&Particle, &problem, &z0, &z1, &l, Interval { t: 1.0, h: 0.1 }, &settings).unwrap();
        assert!(report.nonsingular, "condition {}", report.condition);
    }
}
