//! Optimal trajectory tracking for nonholonomic mechanical systems.
//!
//! A nonholonomic system is described in an adapted basis of its constraint
//! distribution `D` (quasi-velocities `v`, configuration `q`), which removes
//! the Lagrange multipliers from the equations of motion. On top of that
//! description the crate offers two routes to the optimal tracking problem:
//!
//! * [`pmp`]: the indirect route. Optimal Hamiltonian, coupled state/costate
//!   flow and a damped Newton single-shooting solver.
//! * [`varint`]: the structure-preserving route. A second-order Lagrangian on
//!   `D⁽²⁾`, its midpoint discretisation and a constrained discrete
//!   Euler–Lagrange boundary value solver.
//!
//! [`systems`] ships the nonholonomic particle and the Chaplygin sleigh, and
//! [`cli`] wires everything into reproducible experiment runs.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod ode;
pub mod pmp;
pub mod systems;
pub mod varint;

pub use error::{Error, Result};
pub use geometry::{AdmissibleState, ControlVector, SystemModel, Tensor3};
pub use nalgebra::{DMatrix, DVector};
