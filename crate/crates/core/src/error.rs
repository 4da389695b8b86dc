use thiserror::Error;

/// Errors surfaced by the algorithms and oracles in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("horizon must be at least 1")]
    ZeroHorizon,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("induced chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("feature matrix is rank deficient: column {column} is a combination of columns {depends_on:?}")]
    RankDeficient { column: usize, depends_on: Vec<usize> },

    #[error("invalid instance: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("iterate diverged at t = {t}: {detail}")]
    Divergence { t: usize, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
