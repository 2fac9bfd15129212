use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("structure constants are not antisymmetric in the lower indices (C^{c}_{{{a}{b}}} + C^{c}_{{{b}{a}}} = {defect:e})")]
    NotAntisymmetric {
        c: usize,
        a: usize,
        b: usize,
        defect: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "epsilon = {0} is not positive: with zero control regularization the tracking problem \
         becomes a singular optimal control problem, which is not supported"
    )]
    SingularProblem(f64),

    #[error("non-finite value in Runge-Kutta stage {stage} at t = {t}")]
    NonFinite { stage: usize, t: f64 },

    #[error("state/costate flow diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("time {t} lies outside the horizon [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },

    #[error(
        "shooting Jacobian is numerically singular (condition estimate {condition:e}); \
         try a larger epsilon or rescale omega"
    )]
    SingularJacobian { condition: f64 },

    #[error(
        "KKT Jacobian of the discrete Euler-Lagrange system is singular at row {row}; \
         check local solvability with the regularity (M-matrix) check"
    )]
    Regularity { row: usize },

    #[error("non-finite residual in the discrete Euler-Lagrange system")]
    NonFiniteResidual,

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
