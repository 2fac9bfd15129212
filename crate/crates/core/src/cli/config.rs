//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AdmissibleState, SystemModel};
use crate::ode::TimeGrid;
use crate::pmp::{Costate, Reference, Rollout, ShootingSettings, TerminalMode, TrackingProblem};
use crate::systems::Preset;
use crate::varint::{DelSettings, InitialGuess, PsiVelocity, SlotDerivatives};

/// A complete experiment: system, problem, solver and output settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `particle`, `sleigh:paper-5.1` or `sleigh:custom{m=..,J=..,a=..}`.
    pub preset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl StateConfig {
    pub fn to_state(&self) -> AdmissibleState {
        AdmissibleState::from_slices(&self.q, &self.v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// `q_r(t) = q0 + t q_rate`, `v_r(t) = v0 + t v_rate`.
    Affine {
        q0: Vec<f64>,
        q_rate: Vec<f64>,
        v0: Vec<f64>,
        v_rate: Vec<f64>,
    },
    /// Uncontrolled RK4 motion from `start`, with step `step`.
    Rollout { start: StateConfig, step: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub initial_state: StateConfig,
    pub horizon: f64,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "one")]
    pub lambda0: f64,
    pub terminal: TerminalMode,
    pub reference: ReferenceConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PmpShooting,
    Variational,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::PmpShooting => "pmp-shooting",
            Method::Variational => "variational",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    /// `compare` also solves the problem by shooting and reports the cost gap.
    #[serde(default)]
    pub compare_with_shooting: bool,
    #[serde(default)]
    pub shooting: ShootingConfig,
    #[serde(default)]
    pub variational: VariationalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingConfig {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub damping: f64,
    pub max_halvings: usize,
    pub levenberg_fallback: bool,
    /// RK4 step of the state–costate flow.
    pub step: f64,
    /// Initial costate `(λ, μ)`; zero when absent.
    pub alpha0: Option<CostateConfig>,
    /// Mayer weights solved in sequence, each warm-started from the previous
    /// one; the last entry must equal `problem.omega`. Empty means no continuation.
    pub omega_continuation: Vec<f64>,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-8,
            max_iters: 50,
            fd_step: 1e-6,
            damping: 0.5,
            max_halvings: 30,
            levenberg_fallback: true,
            step: 1e-3,
            alpha0: None,
            omega_continuation: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostateConfig {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationalConfig {
    /// Number of intervals `N`; the step is `T / N`.
    pub steps: usize,
    pub newton_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub initial_guess: InitialGuess,
    pub enforce_first_interval: bool,
    pub psi_velocity: PsiVelocity,
    pub slot_derivatives: SlotDerivatives,
    pub damping: f64,
    pub max_halvings: usize,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        let d = DelSettings::default();
        Self {
            steps: 50,
            newton_tol: d.newton_tol,
            max_iters: d.max_iters,
            fd_step: d.fd_step,
            initial_guess: d.initial_guess,
            enforce_first_interval: d.enforce_first_interval,
            psi_velocity: d.psi_velocity,
            slot_derivatives: d.slot_derivatives,
            damping: d.damping,
            max_halvings: d.max_halvings,
        }
    }
}

impl VariationalConfig {
    pub fn settings(&self) -> DelSettings {
        DelSettings {
            newton_tol: self.newton_tol,
            max_iters: self.max_iters,
            fd_step: self.fd_step,
            initial_guess: self.initial_guess,
            enforce_first_interval: self.enforce_first_interval,
            psi_velocity: self.psi_velocity,
            slot_derivatives: self.slot_derivatives,
            damping: self.damping,
            max_halvings: self.max_halvings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the working directory; `--out` overrides it.
    pub directory: PathBuf,
    /// Significant digits of CSV numbers.
    pub precision: usize,
    /// Seed of the random sample points used by `check`.
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            precision: 17,
            seed: 0,
        }
    }
}

/// A validated configuration with its model and problem built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub preset: Preset,
    pub model: Arc<dyn SystemModel>,
    pub problem: TrackingProblem,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment").field("config", &self.config).finish()
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(config_error(format!("`{name}` must be positive, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form; parsing it yields an identical configuration.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    pub fn shooting_settings(&self) -> Result<ShootingSettings> {
        let s = &self.solver.shooting;
        Ok(ShootingSettings {
            newton_tol: s.newton_tol,
            max_iters: s.max_iters,
            fd_step: s.fd_step,
            damping: s.damping,
            max_halvings: s.max_halvings,
            levenberg_fallback: s.levenberg_fallback,
            inner_grid: TimeGrid::with_step(self.problem.horizon, s.step)?,
        })
    }

    pub fn alpha0(&self, model: &dyn SystemModel) -> Costate {
        match &self.solver.shooting.alpha0 {
            Some(c) => Costate {
                lambda: DVector::from_column_slice(&c.lambda),
                mu: DVector::from_column_slice(&c.mu),
            },
            None => Costate::zeros(model.dim(), model.rank()),
        }
    }

    pub fn del_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.problem.horizon, self.solver.variational.steps)
    }

    /// Validates the configuration and builds the model and problem.
    pub fn build(self) -> Result<Experiment> {
        let preset: Preset = self.system.preset.parse()?;
        let model = preset.build()?;
        let (n, r) = (model.dim(), model.rank());
        let p = &self.problem;
        let dims = |field: &str, v: &[f64], expected: usize| {
            if v.len() == expected {
                Ok(())
            } else {
                Err(config_error(format!("`{field}` has {} entries, expected {expected}", v.len())))
            }
        };
        dims("problem.initial_state.q", &p.initial_state.q, n)?;
        dims("problem.initial_state.v", &p.initial_state.v, r)?;
        positive("problem.horizon", p.horizon)?;
        positive("problem.omega", p.omega)?;
        positive("problem.lambda0", p.lambda0)?;
        if !(p.epsilon > 0.0) {
            return Err(Error::SingularProblem(p.epsilon));
        }
        let reference = match &p.reference {
            ReferenceConfig::Affine { q0, q_rate, v0, v_rate } => {
                dims("problem.reference.q0", q0, n)?;
                dims("problem.reference.q_rate", q_rate, n)?;
                dims("problem.reference.v0", v0, r)?;
                dims("problem.reference.v_rate", v_rate, r)?;
                let v = |x: &Vec<f64>| DVector::from_column_slice(x);
                Reference::Affine {
                    q0: v(q0),
                    q_rate: v(q_rate),
                    v0: v(v0),
                    v_rate: v(v_rate),
                }
            }
            ReferenceConfig::Rollout { start, step } => {
                dims("problem.reference.start.q", &start.q, n)?;
                dims("problem.reference.start.v", &start.v, r)?;
                positive("problem.reference.step", *step)?;
                Reference::Rollout(Rollout::new(model.clone(), start.to_state(), p.horizon, *step)?)
            }
        };
        let problem = TrackingProblem {
            reference,
            horizon: p.horizon,
            epsilon: p.epsilon,
            omega: p.omega,
            lambda0: p.lambda0,
            tracking_weight: 1.0,
            terminal: p.terminal,
            initial_state: p.initial_state.to_state(),
        };
        problem.validate(model.as_ref())?;

        let s = &self.solver.shooting;
        positive("solver.shooting.step", s.step)?;
        self.shooting_settings()?.validate(p.horizon)?;
        if let Some(a) = &s.alpha0 {
            dims("solver.shooting.alpha0.lambda", &a.lambda, n)?;
            dims("solver.shooting.alpha0.mu", &a.mu, r)?;
        }
        if let Some(&last) = s.omega_continuation.last() {
            if last != p.omega {
                return Err(config_error("the last `solver.shooting.omega_continuation` entry must equal `problem.omega`"));
            }
            for &w in &s.omega_continuation {
                positive("solver.shooting.omega_continuation", w)?;
            }
        }
        let v = &self.solver.variational;
        if v.steps < 2 {
            return Err(config_error("`solver.variational.steps` must be at least 2"));
        }
        v.settings().validate()?;
        if self.output.precision == 0 || self.output.precision > 17 {
            return Err(config_error("`output.precision` must lie in 1..=17"));
        }
        Ok(Experiment {
            config: self,
            preset,
            model,
            problem,
        })
    }
}
