//! Nonholonomic systems in adapted coordinates.
//!
//! A system is given by a configuration space of dimension `n`, a constraint
//! distribution `D` of corank `m` spanned by the adapted basis
//! `e_A = ρ_A^i(q) ∂/∂q^i`, the Christoffel symbols `Γ^A_{BC}` of the
//! constrained connection in that basis, the restricted metric `(G^D)_{AB}`
//! and the potential gradient already contracted into quasi-velocity
//! coordinates. With controls `u` acting on the quasi-velocities the
//! equations of motion read
//!
//! ```text
//! q̇^i = ρ_A^i(q) v^A
//! v̇^A = −Γ^A_{BC}(q) v^B v^C − (G^D)^{AB} ρ_B^i ∂V/∂q^i + u^A
//! ```
//!
//! Index conventions: `ρ` is an `n × (n−m)` matrix with rows `i` and columns
//! `A`; [`Tensor3`] entries `Γ[(a, b, c)]` hold `Γ^a_{bc}` with
//! `∇_{e_b} e_c = Γ^a_{bc} e_a`; structure constants `C[(c, a, b)]` hold
//! `C^c_{ab}` with `⟦e_a, e_b⟧ = C^c_{ab} e_c`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense rank-3 array, row-major in its three indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self {
            dims: [d0, d1, d2],
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    /// Builds a tensor from a generator evaluated at every index triple.
    pub fn from_fn(d0: usize, d1: usize, d2: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d0, d1, d2);
        for i in 0..d0 {
            for j in 0..d1 {
                for k in 0..d2 {
                    t[(i, j, k)] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn offset(&self, (i, j, k): (usize, usize, usize)) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (i * self.dims[1] + j) * self.dims[2] + k
    }
}

impl std::ops::Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, idx: (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(idx)]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, idx: (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }
}

/// A point of the constraint distribution: configuration plus quasi-velocities.
///
/// Every `AdmissibleState` lies on `D` by construction; the configuration
/// velocity it induces is `ρ(q) v`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibleState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl AdmissibleState {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        Self { q, v }
    }

    pub fn from_slices(q: &[f64], v: &[f64]) -> Self {
        Self {
            q: DVector::from_column_slice(q),
            v: DVector::from_column_slice(v),
        }
    }

    /// `(q, v)` stacked into one vector.
    pub fn stacked(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.q.len() + self.v.len());
        y.rows_mut(0, self.q.len()).copy_from(&self.q);
        y.rows_mut(self.q.len(), self.v.len()).copy_from(&self.v);
        y
    }

    pub fn from_stacked(y: &DVector<f64>, n: usize) -> Self {
        Self {
            q: y.rows(0, n).into_owned(),
            v: y.rows(n, y.len() - n).into_owned(),
        }
    }
}

/// Control inputs in quasi-velocity coordinates (fully actuated: one per basis field).
pub type ControlVector = DVector<f64>;

/// A nonholonomic mechanical system written in an adapted basis of `D`.
///
/// Implementations are immutable; every method is a pure function of `q`.
/// The derivative hooks with default bodies fall back to central finite
/// differences; the built-in systems override them with exact expressions.
pub trait SystemModel: Send + Sync {
    fn name(&self) -> String;

    /// Dimension `n` of the configuration space.
    fn dim(&self) -> usize;

    /// Corank `m` of the distribution.
    fn corank(&self) -> usize;

    /// Rank `n − m` of the distribution (number of quasi-velocities).
    fn rank(&self) -> usize {
        self.dim() - self.corank()
    }

    /// `n × (n−m)` matrix of basis coefficients `ρ_A^i(q)`.
    fn rho(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// `∂ρ_A^i/∂q^j` stored as `[(i, A, j)]`.
    fn rho_jac(&self, q: &DVector<f64>) -> Tensor3;

    /// Christoffel symbols `Γ^A_{BC}(q)`.
    fn christoffel(&self, q: &DVector<f64>) -> Tensor3;

    /// `∂Γ/∂q^j` for each configuration index `j`.
    fn christoffel_jac(&self, q: &DVector<f64>) -> Vec<Tensor3> {
        let r = self.rank();
        central_difference(q, |qq| self.christoffel(qq))
            .into_iter()
            .map(|(plus, minus, step)| {
                Tensor3::from_fn(r, r, r, |a, b, c| (plus[(a, b, c)] - minus[(a, b, c)]) / (2.0 * step))
            })
            .collect()
    }

    /// Restricted metric `(G^D)_{AB}(q)`.
    fn metric_d(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Potential energy `V(q)`.
    fn potential(&self, _q: &DVector<f64>) -> f64 {
        0.0
    }

    /// `(G^D)^{AB} ρ_B^i ∂V/∂q^i`, the potential force in quasi-velocity coordinates.
    fn potential_grad(&self, _q: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.rank())
    }

    /// `∂(potential_grad)^A/∂q^j` as an `(n−m) × n` matrix.
    fn potential_grad_jac(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.rank(), self.dim());
        for (j, (plus, minus, step)) in central_difference(q, |qq| self.potential_grad(qq)).into_iter().enumerate() {
            jac.set_column(j, &((plus - minus) / (2.0 * step)));
        }
        jac
    }

    /// `m × n` matrix of one-form coefficients `μ^a_i(q)` spanning the annihilator of `D`.
    fn annihilator(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Configuration indices that are angles.
    fn angle_indices(&self) -> &[usize] {
        &[]
    }

    /// Structure constants `C^c_{ab}(q)` of the nonholonomic bracket, when known.
    fn structure_constants(&self, _q: &DVector<f64>) -> Option<Tensor3> {
        None
    }

    /// Frame derivatives of the restricted metric, `[(a, b, c)] = e_a((G^D)_{bc})`, when known.
    fn metric_frame_derivative(&self, _q: &DVector<f64>) -> Option<Tensor3> {
        None
    }
}

/// Perturbs each coordinate of `q` by ± a scaled step and evaluates `f` on both sides.
pub(crate) fn central_difference<T>(q: &DVector<f64>, f: impl Fn(&DVector<f64>) -> T) -> Vec<(T, T, f64)> {
    (0..q.len())
        .map(|j| {
            let step = 1e-6 * q[j].abs().max(1.0);
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[j] += step;
            minus[j] -= step;
            let step = (plus[j] - minus[j]) / 2.0;
            (f(&plus), f(&minus), step)
        })
        .collect()
}

fn expect_len(field: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { field, expected, found })
    }
}

pub(crate) fn check_state(model: &dyn SystemModel, state: &AdmissibleState) -> Result<()> {
    expect_len("q", model.dim(), state.q.len())?;
    expect_len("v", model.rank(), state.v.len())
}

/// Configuration velocity `q̇ = ρ(q) v` induced by an admissible state.
pub fn admissibility_velocity(model: &dyn SystemModel, state: &AdmissibleState) -> Result<DVector<f64>> {
    check_state(model, state)?;
    Ok(model.rho(&state.q) * &state.v)
}

/// `Γ^A_{BC} v^B v^C`.
pub fn quadratic_term(gamma: &Tensor3, v: &DVector<f64>) -> DVector<f64> {
    let r = v.len();
    DVector::from_fn(r, |a, _| {
        let mut s = 0.0;
        for b in 0..r {
            for c in 0..r {
                s += gamma[(a, b, c)] * v[b] * v[c];
            }
        }
        s
    })
}

/// Controlled equations of motion: returns `(q̇, v̇)`.
pub fn dynamics_rhs(
    model: &dyn SystemModel,
    state: &AdmissibleState,
    u: &ControlVector,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_state(model, state)?;
    expect_len("u", model.rank(), u.len())?;
    let qdot = model.rho(&state.q) * &state.v;
    let vdot = u - quadratic_term(&model.christoffel(&state.q), &state.v) - model.potential_grad(&state.q);
    Ok((qdot, vdot))
}

/// Values of the constraint one-forms on a configuration velocity; zero iff `qdot ∈ D_q`.
pub fn constraint_residual(model: &dyn SystemModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
    expect_len("q", model.dim(), q.len())?;
    expect_len("qdot", model.dim(), qdot.len())?;
    Ok(model.annihilator(q) * qdot)
}

/// Restricted energy `½ (G^D)_{AB} v^A v^B + V(q)`.
pub fn restricted_energy(model: &dyn SystemModel, state: &AdmissibleState) -> f64 {
    0.5 * state.v.dot(&(model.metric_d(&state.q) * &state.v)) + model.potential(&state.q)
}

fn check_structure(structure: &Tensor3) -> Result<usize> {
    let [d0, d1, d2] = structure.dims();
    if d0 != d1 || d1 != d2 {
        return Err(Error::Dimension {
            field: "structure",
            expected: d0,
            found: d1.max(d2),
        });
    }
    let tol = 1e-12 * structure.max_abs().max(1.0);
    for c in 0..d0 {
        for a in 0..d0 {
            for b in a..d0 {
                let defect = structure[(c, a, b)] + structure[(c, b, a)];
                if defect.abs() > tol {
                    return Err(Error::NotAntisymmetric { c, a, b, defect });
                }
            }
        }
    }
    Ok(d0)
}

/// Christoffel symbols of an orthonormal adapted frame from the structure
/// constants of the nonholonomic bracket:
/// `Γ^C_{AB} = ½ (C^B_{CA} + C^A_{CB} + C^C_{AB})`.
pub fn christoffel_from_structure(structure: &Tensor3) -> Result<Tensor3> {
    let r = check_structure(structure)?;
    Ok(Tensor3::from_fn(r, r, r, |c, a, b| {
        0.5 * (structure[(b, c, a)] + structure[(a, c, b)] + structure[(c, a, b)])
    }))
}

/// Christoffel symbols of a general (not necessarily orthonormal) adapted
/// frame, from the Koszul formula
///
/// ```text
/// 2 g(∇_{e_A} e_B, e_C) = e_A(g_BC) + e_B(g_AC) − e_C(g_AB)
///                        + C^E_{AB} g_EC − C^E_{AC} g_EB − C^E_{BC} g_EA
/// ```
///
/// With `g = I` and vanishing frame derivatives this is
/// [`christoffel_from_structure`].
pub fn christoffel_from_frame(structure: &Tensor3, metric: &DMatrix<f64>, frame_derivative: &Tensor3) -> Result<Tensor3> {
    let r = check_structure(structure)?;
    expect_len("metric", r, metric.nrows())?;
    expect_len("metric", r, metric.ncols())?;
    expect_len("frame_derivative", r, frame_derivative.dims()[0])?;
    let inv = metric.clone().try_inverse().ok_or_else(|| Error::InvalidParameter {
        name: "metric",
        reason: "restricted metric is singular".into(),
    })?;
    // lowered[(c, a, b)] = g(∇_{e_a} e_b, e_c)
    let lowered = Tensor3::from_fn(r, r, r, |c, a, b| {
        let mut s = frame_derivative[(a, b, c)] + frame_derivative[(b, a, c)] - frame_derivative[(c, a, b)];
        for e in 0..r {
            s += structure[(e, a, b)] * metric[(e, c)]
                - structure[(e, a, c)] * metric[(e, b)]
                - structure[(e, b, c)] * metric[(e, a)];
        }
        0.5 * s
    });
    Ok(Tensor3::from_fn(r, r, r, |d, a, b| {
        (0..r).map(|c| inv[(d, c)] * lowered[(c, a, b)]).sum()
    }))
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_to_pi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Wraps an angle into `[0, 2π)` for reporting.
pub fn wrap_to_2pi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y >= 2.0 * PI {
        0.0
    } else {
        y
    }
}

/// `q − q_ref` with angle components differenced modulo 2π.
pub fn configuration_error(model: &dyn SystemModel, q: &DVector<f64>, q_ref: &DVector<f64>) -> DVector<f64> {
    let mut d = q - q_ref;
    for &i in model.angle_indices() {
        d[i] = wrap_to_pi(d[i]);
    }
    d
}

/// Copy of `q` with angle components wrapped into `[0, 2π)`.
pub fn wrapped_configuration(model: &dyn SystemModel, q: &DVector<f64>) -> DVector<f64> {
    let mut out = q.clone();
    for &i in model.angle_indices() {
        out[i] = wrap_to_2pi(out[i]);
    }
    out
}

/// Outcome of one model invariant check.
#[derive(Clone, Debug)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InvariantCheck {
    fn new(name: &'static str, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

/// Runs the structural invariants of a model at the given sample configurations:
/// `annihilator · ρ = 0`, full column rank of `ρ`, `rho_jac` against central
/// differences, symmetry and positive definiteness of the restricted metric,
/// and agreement of `Γ` with the structure-constant route when the model
/// provides structure constants.
pub fn check_model(model: &dyn SystemModel, samples: &[DVector<f64>]) -> Vec<InvariantCheck> {
    let (n, r) = (model.dim(), model.rank());
    let mut annihilation = 0.0_f64;
    let mut rank_defect = 0.0_f64;
    let mut jac_err = 0.0_f64;
    let mut asym = 0.0_f64;
    let mut min_eig = f64::INFINITY;
    let mut gamma_err: Option<f64> = None;

    for q in samples {
        let rho = model.rho(q);
        annihilation = annihilation.max((model.annihilator(q) * &rho).abs().max());
        let sv = rho.clone().svd(false, false).singular_values;
        rank_defect = rank_defect.max(sv.max() / sv.min().max(f64::MIN_POSITIVE));

        let exact = model.rho_jac(q);
        for (j, (plus, minus, step)) in central_difference(q, |qq| model.rho(qq)).into_iter().enumerate() {
            let fd = (plus - minus) / (2.0 * step);
            for i in 0..n {
                for a in 0..r {
                    let e = exact[(i, a, j)];
                    let rel = (e - fd[(i, a)]).abs() / e.abs().max(1.0);
                    jac_err = jac_err.max(rel);
                }
            }
        }

        let g = model.metric_d(q);
        asym = asym.max((&g - g.transpose()).abs().max());
        let sym = (&g + g.transpose()) * 0.5;
        min_eig = min_eig.min(sym.symmetric_eigenvalues().min());

        if let Some(structure) = model.structure_constants(q) {
            let from_structure = match model.metric_frame_derivative(q) {
                Some(deriv) => christoffel_from_frame(&structure, &g, &deriv),
                None => christoffel_from_structure(&structure),
            };
            let err = match from_structure {
                Ok(t) => {
                    let stored = model.christoffel(q);
                    t.as_slice()
                        .iter()
                        .zip(stored.as_slice())
                        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
                }
                Err(_) => f64::INFINITY,
            };
            gamma_err = Some(gamma_err.unwrap_or(0.0).max(err));
        }
    }

    let mut checks = vec![
        InvariantCheck::new("annihilator * rho = 0", annihilation, 1e-12),
        InvariantCheck::new("rho has full column rank (condition)", rank_defect, 1e8),
        InvariantCheck::new("rho_jac matches central differences", jac_err, 1e-6),
        InvariantCheck::new("metric_d symmetric", asym, 1e-12),
        InvariantCheck::new("metric_d positive definite", if min_eig > 0.0 { 0.0 } else { 1.0 }, 0.0),
    ];
    if let Some(err) = gamma_err {
        checks.push(InvariantCheck::new("christoffel matches structure constants", err, 1e-14));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Particle, Sleigh, SleighParams};
    use approx::assert_relative_eq;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn particle_admissibility_velocity() {
        let p = Particle;
        let zero = admissibility_velocity(&p, &AdmissibleState::from_slices(&[0.0; 3], &[0.0; 2])).unwrap();
        assert_eq!(zero, dv(&[0.0, 0.0, 0.0]));
        for (x, z) in [(0.0, 0.0), (-3.5, 7.25)] {
            let qd = admissibility_velocity(&p, &AdmissibleState::from_slices(&[x, 2.0, z], &[1.0, 3.0])).unwrap();
            assert_eq!(qd, dv(&[-6.0, 1.0, 3.0]));
        }
    }

    #[test]
    fn sleigh_admissibility_velocity() {
        let s = Sleigh::new(SleighParams::paper()).unwrap();
        let qd = admissibility_velocity(&s, &AdmissibleState::from_slices(&[0.0, 0.0, 0.0], &[0.0, 1.0])).unwrap();
        assert_eq!(qd, dv(&[1.0, 0.0, 0.0]));
        let qd = admissibility_velocity(&s, &AdmissibleState::from_slices(&[0.0, 0.0, PI / 2.0], &[0.0, 1.0])).unwrap();
        assert!((qd - dv(&[0.0, 1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let err = admissibility_velocity(&Particle, &AdmissibleState::from_slices(&[0.0; 2], &[0.0; 2])).unwrap_err();
        assert!(matches!(err, Error::Dimension { field: "q", expected: 3, found: 2 }));
        let err = dynamics_rhs(&Particle, &AdmissibleState::from_slices(&[0.0; 3], &[0.0; 2]), &dv(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension { field: "u", .. }));
    }

    #[test]
    fn particle_dynamics() {
        let (_, vdot) = dynamics_rhs(&Particle, &AdmissibleState::from_slices(&[0.3, 1.0, -2.0], &[2.0, 3.0]), &dv(&[0.0, 0.0])).unwrap();
        assert_eq!(vdot[0], 0.0);
        assert_relative_eq!(vdot[1], -3.0, max_relative = 1e-15);
    }

    #[test]
    fn sleigh_dynamics() {
        let s = Sleigh::new(SleighParams::paper()).unwrap();
        let (_, vdot) = dynamics_rhs(&s, &AdmissibleState::from_slices(&[0.0; 3], &[1.0, 0.0]), &dv(&[0.0, 0.0])).unwrap();
        assert_eq!(vdot[0], 0.0);
        assert_relative_eq!(vdot[1], 0.2 / 4.04, max_relative = 1e-15);
        assert_relative_eq!(vdot[1], 0.0495049504950495, max_relative = 1e-12);
    }

    #[test]
    fn particle_constraint_residual() {
        let p = Particle;
        let q = dv(&[0.4, 1.0, -0.3]);
        assert_eq!(constraint_residual(&p, &q, &DVector::zeros(3)).unwrap(), dv(&[0.0]));
        assert_eq!(constraint_residual(&p, &q, &dv(&[1.0, 0.0, 0.0])).unwrap(), dv(&[1.0]));
        let (y, b, c) = (1.7, 0.3, -2.2);
        let q = dv(&[0.0, y, 0.0]);
        let res = constraint_residual(&p, &q, &dv(&[-y * c, b, c])).unwrap();
        assert!(res[0].abs() < 1e-15);
    }

    #[test]
    fn structure_zero_gives_zero_christoffel() {
        let g = christoffel_from_structure(&Tensor3::zeros(2, 2, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn structure_must_be_antisymmetric() {
        let mut c = Tensor3::zeros(2, 2, 2);
        c[(0, 0, 1)] = 1.0;
        c[(0, 1, 0)] = 0.5;
        assert!(matches!(christoffel_from_structure(&c), Err(Error::NotAntisymmetric { .. })));
    }

    #[test]
    fn particle_christoffel_from_frame() {
        let p = Particle;
        for y in [-2.0, 0.0, 0.5, 3.0] {
            let q = dv(&[0.0, y, 0.0]);
            let c = p.structure_constants(&q).unwrap();
            let g = christoffel_from_frame(&c, &p.metric_d(&q), &p.metric_frame_derivative(&q).unwrap()).unwrap();
            let f = y / (1.0 + y * y);
            for a in 0..2 {
                for b in 0..2 {
                    for d in 0..2 {
                        let expected = if (a, b, d) == (1, 0, 1) { f } else { 0.0 };
                        assert!((g[(a, b, d)] - expected).abs() <= 1e-15, "Γ^{a}_{b}{d} at y={y}");
                    }
                }
            }
        }
    }

    #[test]
    fn frame_formula_reduces_to_structure_formula_for_orthonormal_frames() {
        let mut c = Tensor3::zeros(3, 3, 3);
        let vals = [(0, 0, 1, 0.7), (1, 0, 2, -1.3), (2, 1, 2, 0.4), (0, 1, 2, 2.1)];
        for (k, a, b, x) in vals {
            c[(k, a, b)] = x;
            c[(k, b, a)] = -x;
        }
        let direct = christoffel_from_structure(&c).unwrap();
        let koszul = christoffel_from_frame(&c, &DMatrix::identity(3, 3), &Tensor3::zeros(3, 3, 3)).unwrap();
        for (a, b) in direct.as_slice().iter().zip(koszul.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn angle_wrapping() {
        assert_eq!(wrap_to_pi(PI), PI);
        assert_relative_eq!(wrap_to_pi(-PI), PI);
        assert_relative_eq!(wrap_to_pi(4.0 * PI / 3.0), -2.0 * PI / 3.0, max_relative = 1e-14);
        assert_relative_eq!(wrap_to_2pi(-0.5), 2.0 * PI - 0.5);
        assert_eq!(wrap_to_2pi(0.25), 0.25);
    }
}
