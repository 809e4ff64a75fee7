use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate fitting block at iteration {k}: accumulated block is zero")]
    DegenerateBlock { k: usize },

    #[error(
        "orthogonalization residual {0:e} is below threshold; candidate lies in the active span"
    )]
    DependentCandidate(f64),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
