use thiserror::Error;

/// Errors raised by the solvers, the verification harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The habitat must be non-constant with positive mean.
    #[error("habitat rejected: {0}")]
    Habitat(String),

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{0}: iterate left the positive cone")]
    NegativeSolution(&'static str),

    #[error("Airy argument {0} outside the supported range |x| <= 20")]
    OutOfRange(f64),

    #[error("could not bracket the first negative zero of Ai'")]
    BracketFailure,

    #[error("selection gradient a1 must be positive, got {0}")]
    InvalidA1(f64),

    #[error("field is identically zero")]
    ZeroField,

    #[error("blow-up at t = {time}: sup norm {sup:.3e}")]
    BlowUp { time: f64, sup: f64 },

    #[error("non-positive density at t = {time}")]
    NonPositive { time: f64 },

    #[error("no positive steady state exists: mu1 = {mu1:.6e} >= 0")]
    NonExistence { mu1: f64 },

    #[error("trait tail unresolved: only {points} usable nodes in the fit window")]
    InsufficientTail { points: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
