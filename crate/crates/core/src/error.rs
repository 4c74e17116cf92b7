use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge on [{a}, {b}]: estimate {value:e}, error {error:e}")]
    Quadrature { a: f64, b: f64, value: f64, error: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL violated: dt = {dt:e} exceeds bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("explicit term {term} has an infinite Lipschitz constant; use an implicit or regularized nonlinearity")]
    UnboundedLipschitz { term: String },

    #[error("nonlinear solver failed at t = {t}: {reason}")]
    SolverFailure { t: f64, reason: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
