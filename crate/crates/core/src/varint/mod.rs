//! Structure-preserving route: the second-order Lagrangian on `D⁽²⁾`, its
//! midpoint discretisation and the constrained discrete Euler–Lagrange
//! boundary value problem.

mod diagnostics;
mod discrete;
mod lagrangian;
mod solver;

pub use diagnostics::{compare_refinement, diagnostics, endpoint_discrepancy, reintegrate_controls, DiagnosticRow, RefinementStudy, REINTEGRATION_SUBSTEPS};
pub use discrete::{
    constraint_slot_jacobian, discrete_constraint, discrete_lagrangian, lagrangian_slot_gradient, Interval, PsiVelocity, SlotDerivatives, SlotGradient,
    SlotJacobian,
};
pub use lagrangian::{
    continuous_optimality_residual, ocp_lagrangian, ocp_lagrangian_partials, optimality_residual_at, reconstructed_control, JetPoint, LagrangianPartials,
    OptimalityResidual,
};
pub use solver::{
    del_residual, extended_action, regularity_check, regularity_sweep, solve_del, state_distance, DelOutcome, DelSettings, DelSystem, DiscreteTrajectory,
    InitialGuess, Layout, RegularityReport, REGULARITY_LIMIT,
};

#[cfg(test)]
mod tests;
