use thiserror::Error;

use crate::domain::ModuliViolation;

pub type Result<T> = std::result::Result<T, MssError>;

#[derive(Debug, Error)]
pub enum MssError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid moduli: {0}")]
    InvalidModuli(ModuliViolation),

    #[error("report space too large to enumerate ({size} outcomes, limit {limit})")]
    Capacity { size: u128, limit: u128 },

    #[error("moduli search exhausted: no valid tuple for k={k}")]
    SearchExhausted { k: usize },

    #[error("no reports in any block")]
    NoData,

    #[error("malformed report: {0}")]
    MalformedReport(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weighted design is rank deficient")]
    RankDeficient,

    #[error("condition-number bound undefined: {0}")]
    UndefinedBound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MssError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MssError::InvalidArgument(msg.into())
    }
}
