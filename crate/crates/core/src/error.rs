use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("decomposition of a {n}x{n} matrix did not converge (fro = {fro:.6e}, max |entry| = {sup:.6e})")]
    NumericalFailure { n: usize, fro: f64, sup: f64 },

    #[error("solver produced NaN at iteration {iteration}")]
    NanIterate { iteration: usize },

    #[error("empty window")]
    EmptyWindow,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid snapshot at t={t}: {reason}")]
    InvalidSnapshot { t: usize, reason: String },

    #[error("expected snapshot t={expected}, got t={found}")]
    NonContiguous { expected: usize, found: usize },

    #[error("detector already alarmed at t={at}")]
    AlreadyAlarmed { at: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("malformed stream file, line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
