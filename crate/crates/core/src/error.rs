use thiserror::Error;

use crate::kbb::RunRecord;

pub type Result<T, E = KbbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KbbError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge within {iters} iterations")]
    NonConvergence { what: &'static str, iters: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("model is not reversible with respect to its stationary distribution")]
    NotReversible,

    #[error("degenerate complement: the basis spans the whole state space")]
    DegenerateComplement,

    #[error("regression input is empty")]
    EmptyInput,

    #[error("regression input mixes state kinds")]
    MixedStateKinds,

    #[error("LSTD system unsolvable: {0}")]
    LstdFailure(String),

    #[error("run aborted at iteration {}: {reason}", .record.rows.len() + 1)]
    Aborted { record: Box<RunRecord>, reason: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
