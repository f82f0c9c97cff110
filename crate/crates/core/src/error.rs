use thiserror::Error;

/// Errors produced by the search engine and its IO surfaces.
#[derive(Debug, Error)]
pub enum PtcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("state error: {0}")]
    State(String),

    #[error("infeasible footprint constraint: {0}")]
    Infeasible(String),

    #[error("permutation legalization failed after {attempts} attempts")]
    Legalization {
        attempts: usize,
        /// Last best-effort candidate (row-wise one-hot, possibly colliding).
        best_effort: Vec<usize>,
    },

    #[error("training diverged at step {step}: {what}")]
    Divergence {
        step: usize,
        what: String,
        /// Recent loss values, newest last.
        trace: Vec<f64>,
    },

    #[error("invalid netlist: {0}")]
    Netlist(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PtcError> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> PtcError {
    PtcError::Config(msg.into())
}
