use nalgebra::DVector;

use super::*;
use crate::geometry::AdmissibleState;
use crate::ode::TimeGrid;
use crate::pmp::{Reference, TerminalMode, TrackingProblem};
use crate::systems::{Particle, Sleigh, SleighParams};

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
        1.0,
        7.0,
    )
}

#[test]
fn layout_indices_are_consistent() {
    for (first, terminal) in [(false, TerminalMode::Hard), (true, TerminalMode::Hard), (false, TerminalMode::Mayer), (true, TerminalMode::Mayer)] {
        let settings = DelSettings {
            enforce_first_interval: first,
            ..DelSettings::default()
        };
        let layout = Layout::new(&Particle, 5, &settings, terminal);
        let mut used = vec![0usize; layout.len()];
        for k in 0..=5 {
            if let Some(b) = layout.node(k) {
                used[b..b + 5].iter_mut().for_each(|c| *c += 1);
            }
            if let Some(b) = layout.multiplier(k) {
                used[b..b + 3].iter_mut().for_each(|c| *c += 1);
            }
        }
        assert!(used.iter().all(|&c| c == 1), "{first} {terminal}");
        assert_eq!(layout.node(0), None);
        assert_eq!(layout.node(5).is_some(), terminal == TerminalMode::Mayer);
        assert_eq!(layout.multiplier(0).is_some(), first);
        assert_eq!(layout.multiplier(5), None);
    }
}

#[test]
fn pack_unpack_round_trip() {
    let p = case2().with_terminal(TerminalMode::Mayer);
    let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
    let settings = DelSettings {
        enforce_first_interval: true,
        ..DelSettings::default()
    };
    let sys = DelSystem::new(&Particle, &p, grid, settings).unwrap();
    let mut traj = sys.initial_trajectory().unwrap();
    for (k, l) in traj.multipliers.iter_mut().enumerate() {
        *l = DVector::from_element(3, k as f64 + 0.5);
    }
    let x = sys.layout.pack(&traj);
    let back = sys.layout.unpack(&x, &traj);
    assert_eq!(back.nodes, traj.nodes);
    assert_eq!(back.multipliers, traj.multipliers);
}

#[test]
fn equilibrium_is_returned_unchanged() {
    let rest = AdmissibleState::from_slices(&[0.3, -0.2, 0.5], &[0.0, 0.0]);
    let p = TrackingProblem::new(Reference::constant(&rest), rest.clone(), 1.0, 1.0).with_terminal(TerminalMode::Hard);
    let out = solve_del(&Particle, &p, TimeGrid::new(0.0, 1.0, 4).unwrap(), &DelSettings::default()).unwrap();
    assert!(out.converged);
    assert_eq!(out.iterations.len(), 1);
    assert!(out.trajectory.nodes.iter().all(|z| *z == rest));
    assert!(out.trajectory.controls.iter().all(|u| u.amax() == 0.0));
    let rows = diagnostics(&Particle, &p, &out.trajectory, PsiVelocity::Midpoint).unwrap();
    assert!(rows.iter().all(|r| r.running_cost == 0.0 && r.action == 0.0));
    assert_eq!(rows.last().unwrap().control, None);
}

#[test]
fn hard_mode_solve_satisfies_constraints_and_boundary() {
    let p = case2().with_terminal(TerminalMode::Hard);
    let out = solve_del(&Particle, &p, TimeGrid::new(0.0, 1.0, 10).unwrap(), &DelSettings::default()).unwrap();
    assert!(out.converged, "residual {}", out.residual_norm);
    let traj = &out.trajectory;
    assert_eq!(traj.nodes[0], p.initial_state);
    assert_eq!(*traj.nodes.last().unwrap(), p.reference_at(1.0).unwrap());
    let psi = traj.constraint_residuals(&Particle, PsiVelocity::Midpoint);
    assert!(psi[1..].iter().all(|&r| r <= 1e-10));
    assert!(traj.multipliers[0].amax() == 0.0);
}

#[test]
fn cumulative_action_ends_at_action_sum() {
    let p = case2();
    let out = solve_del(&Particle, &p, TimeGrid::new(0.0, 1.0, 8).unwrap(), &DelSettings::default()).unwrap();
    let rows = diagnostics(&Particle, &p, &out.trajectory, PsiVelocity::Midpoint).unwrap();
    assert_eq!(rows.last().unwrap().action, out.trajectory.action(&Particle, &p).unwrap());
}

#[test]
fn residual_vanishes_at_solution() {
    let p = case2();
    let settings = DelSettings::default();
    let out = solve_del(&Particle, &p, TimeGrid::new(0.0, 1.0, 6).unwrap(), &settings).unwrap();
    assert!(out.converged);
    let r = del_residual(&Particle, &p, &out.trajectory, &settings).unwrap();
    assert!(r.amax() <= settings.newton_tol);
}

#[test]
fn too_few_steps_rejected() {
    let p = case2();
    assert!(solve_del(&Particle, &p, TimeGrid::new(0.0, 1.0, 1).unwrap(), &DelSettings::default()).is_err());
    assert!(solve_del(&Particle, &p, TimeGrid::new(0.0, 2.0, 4).unwrap(), &DelSettings::default()).is_err());
}

#[test]
fn sleigh_regular_at_rest_nodes() {
    let s = Sleigh::new(SleighParams::paper()).unwrap();
    let z = AdmissibleState::from_slices(&[0.0, 0.0, 1.0], &[0.25, 1.0]);
    let p = TrackingProblem::new(Reference::constant(&z), z.clone(), 5.0, 1.0);
    let rep = regularity_check(&s, &p, &z, &z, &DVector::zeros(3), Interval { t: 0.0, h: 0.1 }, &DelSettings::default()).unwrap();
    assert!(rep.nonsingular && rep.condition >= 1.0, "{rep:?}");
}

#[test]
fn reintegration_of_zero_control_rest_is_exact() {
    let rest = AdmissibleState::from_slices(&[0.3, -0.2, 0.5], &[0.0, 0.0]);
    let traj = DiscreteTrajectory {
        grid: TimeGrid::new(0.0, 1.0, 4).unwrap(),
        nodes: vec![rest.clone(); 5],
        multipliers: vec![DVector::zeros(3); 4],
        controls: vec![DVector::zeros(2); 4],
    };
    let path = reintegrate_controls(&Particle, &traj, 10).unwrap();
    assert!(path.iter().all(|z| *z == rest));
    assert_eq!(endpoint_discrepancy(&Particle, &traj, 10).unwrap(), 0.0);
}
