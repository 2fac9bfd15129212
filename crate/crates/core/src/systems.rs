//! Built-in benchmark systems: the nonholonomic particle and the Chaplygin sleigh.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{restricted_energy, AdmissibleState, SystemModel, Tensor3};

/// Unit-mass particle in `R³` with the constraint `ẋ + y ż = 0`.
///
/// Coordinates `q = (x, y, z)`, adapted basis `Y₁ = ∂_y`, `Y₂ = ∂_z − y ∂_x`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Particle;

impl Particle {
    fn coupling(y: f64) -> f64 {
        y / (1.0 + y * y)
    }
}

impl SystemModel for Particle {
    fn name(&self) -> String {
        "particle".into()
    }

    fn dim(&self) -> usize {
        3
    }

    fn corank(&self) -> usize {
        1
    }

    fn rho(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let y = q[1];
        DMatrix::from_row_slice(3, 2, &[0.0, -y, 1.0, 0.0, 0.0, 1.0])
    }

    fn rho_jac(&self, _q: &DVector<f64>) -> Tensor3 {
        let mut t = Tensor3::zeros(3, 2, 3);
        t[(0, 1, 1)] = -1.0;
        t
    }

    fn christoffel(&self, q: &DVector<f64>) -> Tensor3 {
        let mut g = Tensor3::zeros(2, 2, 2);
        g[(1, 0, 1)] = Self::coupling(q[1]);
        g
    }

    fn christoffel_jac(&self, q: &DVector<f64>) -> Vec<Tensor3> {
        let y = q[1];
        let mut dy = Tensor3::zeros(2, 2, 2);
        dy[(1, 0, 1)] = (1.0 - y * y) / ((1.0 + y * y) * (1.0 + y * y));
        vec![Tensor3::zeros(2, 2, 2), dy, Tensor3::zeros(2, 2, 2)]
    }

    fn metric_d(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let y = q[1];
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 + y * y])
    }

    fn potential_grad_jac(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 3)
    }

    fn annihilator(&self, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, q[1]])
    }

    fn structure_constants(&self, q: &DVector<f64>) -> Option<Tensor3> {
        // ⟦Y₁, Y₂⟧ = P(−∂_x) = y/(1+y²) Y₂
        let f = Self::coupling(q[1]);
        let mut c = Tensor3::zeros(2, 2, 2);
        c[(1, 0, 1)] = f;
        c[(1, 1, 0)] = -f;
        Some(c)
    }

    fn metric_frame_derivative(&self, q: &DVector<f64>) -> Option<Tensor3> {
        // Y₁ = ∂_y acting on g₂₂ = 1 + y²
        let mut d = Tensor3::zeros(2, 2, 2);
        d[(0, 1, 1)] = 2.0 * q[1];
        Some(d)
    }
}

/// Physical parameters of the Chaplygin sleigh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleighParams {
    /// Mass `m` (kg).
    pub mass: f64,
    /// Moment of inertia `J` about the centre of mass (kg·m²).
    pub inertia: f64,
    /// Distance `a` from the blade contact point to the centre of mass (m).
    pub offset: f64,
}

impl SleighParams {
    /// `m = 1, J = 4, a = 0.2`, the preset `sleigh:paper-5.1`.
    pub const fn paper() -> Self {
        Self {
            mass: 1.0,
            inertia: 4.0,
            offset: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return bad("m", "mass must be positive");
        }
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return bad("J", "inertia must be positive");
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            return bad("a", "offset must be nonnegative");
        }
        if self.inertia + self.mass * self.offset * self.offset <= 0.0 {
            return bad("J", "J + m a² must be positive");
        }
        Ok(())
    }

    /// `η = a√m / (J + m a²)`.
    pub fn eta(&self) -> f64 {
        self.offset * self.mass.sqrt() / (self.inertia + self.mass * self.offset * self.offset)
    }
}

/// Chaplygin sleigh on `SE(2)` with coordinates `q = (x₁, x₂, θ)` and the
/// orthonormal adapted basis `X₁ = ∂_θ/√(J+ma²)`, `X₂ = (cos θ ∂_{x₁} + sin θ ∂_{x₂})/√m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sleigh {
    params: SleighParams,
    eta: f64,
    inv_sqrt_inertia: f64,
    inv_sqrt_mass: f64,
}

impl Sleigh {
    pub fn new(params: SleighParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            eta: params.eta(),
            inv_sqrt_inertia: 1.0 / (params.inertia + params.mass * params.offset * params.offset).sqrt(),
            inv_sqrt_mass: 1.0 / params.mass.sqrt(),
        })
    }

    pub fn params(&self) -> SleighParams {
        self.params
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl SystemModel for Sleigh {
    fn name(&self) -> String {
        let p = self.params;
        if p == SleighParams::paper() {
            "sleigh:paper-5.1".into()
        } else {
            format!("sleigh:custom{{m={},J={},a={}}}", p.mass, p.inertia, p.offset)
        }
    }

    fn dim(&self) -> usize {
        3
    }

    fn corank(&self) -> usize {
        1
    }

    fn rho(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = q[2].sin_cos();
        let k = self.inv_sqrt_mass;
        DMatrix::from_row_slice(3, 2, &[0.0, c * k, 0.0, s * k, self.inv_sqrt_inertia, 0.0])
    }

    fn rho_jac(&self, q: &DVector<f64>) -> Tensor3 {
        let (s, c) = q[2].sin_cos();
        let mut t = Tensor3::zeros(3, 2, 3);
        t[(0, 1, 2)] = -s * self.inv_sqrt_mass;
        t[(1, 1, 2)] = c * self.inv_sqrt_mass;
        t
    }

    fn christoffel(&self, _q: &DVector<f64>) -> Tensor3 {
        let mut g = Tensor3::zeros(2, 2, 2);
        g[(0, 0, 1)] = self.eta;
        g[(1, 0, 0)] = -self.eta;
        g
    }

    fn christoffel_jac(&self, _q: &DVector<f64>) -> Vec<Tensor3> {
        vec![Tensor3::zeros(2, 2, 2); 3]
    }

    fn metric_d(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }

    fn potential_grad_jac(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 3)
    }

    fn annihilator(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = q[2].sin_cos();
        DMatrix::from_row_slice(1, 3, &[-s, c, 0.0])
    }

    fn angle_indices(&self) -> &[usize] {
        &[2]
    }

    fn structure_constants(&self, _q: &DVector<f64>) -> Option<Tensor3> {
        // ⟦X₁, X₂⟧ = η X₁
        let mut c = Tensor3::zeros(2, 2, 2);
        c[(0, 0, 1)] = self.eta;
        c[(0, 1, 0)] = -self.eta;
        Some(c)
    }
}

/// Restricted Lagrangian `ℓ = ½ G^D(v, v) − V(q)` on the distribution.
pub fn restricted_lagrangian(model: &dyn SystemModel, state: &AdmissibleState) -> f64 {
    restricted_energy(model, state) - 2.0 * model.potential(&state.q)
}

/// Named system presets, as written in experiment configs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preset {
    Particle,
    Sleigh(SleighParams),
}

impl Preset {
    pub fn build(&self) -> Result<Arc<dyn SystemModel>> {
        Ok(match *self {
            Preset::Particle => Arc::new(Particle),
            Preset::Sleigh(p) => Arc::new(Sleigh::new(p)?),
        })
    }

    /// Preset names that can be resolved without parameters.
    pub fn catalogue() -> &'static [(&'static str, &'static str)] {
        &[
            ("particle", "nonholonomic particle in R^3 with constraint xdot + y zdot = 0"),
            ("sleigh:paper-5.1", "Chaplygin sleigh with m = 1, J = 4, a = 0.2"),
            ("sleigh:custom{m=..,J=..,a=..}", "Chaplygin sleigh with custom parameters"),
        ]
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Particle => write!(f, "particle"),
            Preset::Sleigh(p) if *p == SleighParams::paper() => write!(f, "sleigh:paper-5.1"),
            Preset::Sleigh(p) => write!(f, "sleigh:custom{{m={:?},J={:?},a={:?}}}", p.mass, p.inertia, p.offset),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "particle" => return Ok(Preset::Particle),
            "sleigh" | "sleigh:paper-5.1" => return Ok(Preset::Sleigh(SleighParams::paper())),
            _ => {}
        }
        let body = s
            .strip_prefix("sleigh:custom{")
            .and_then(|rest| rest.strip_suffix('}'))
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))?;
        let (mut m, mut j, mut a) = (None, None, None);
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| Error::UnknownPreset(s.to_string()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::UnknownPreset(s.to_string()))?;
            match key.trim() {
                "m" => m = Some(value),
                "J" => j = Some(value),
                "a" => a = Some(value),
                _ => return Err(Error::UnknownPreset(s.to_string())),
            }
        }
        match (m, j, a) {
            (Some(mass), Some(inertia), Some(offset)) => {
                let params = SleighParams { mass, inertia, offset };
                params.validate()?;
                Ok(Preset::Sleigh(params))
            }
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}
