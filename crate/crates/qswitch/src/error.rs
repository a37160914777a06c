use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps variants onto process exit codes: configuration and
/// validation problems exit with 2, enumeration-budget problems with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("value iteration did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("behavior-induced chain is not irreducible and aperiodic: {0}")]
    ReducibleChain(String),

    #[error("linearization coefficient {lambda} outside [0,1] beyond the 1e-12 rounding window at state {state}")]
    LinearizationOutOfRange { lambda: f64, state: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
