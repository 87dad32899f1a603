use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unstable dynamics: spectral radius {radius:.6} is not below 1")]
    Unstable { radius: f64 },

    #[error("degenerate pencil: {0}")]
    DegeneratePencil(String),

    #[error("controller synthesis failed: {0}")]
    Synthesis(String),

    #[error("parity order {s} too small: no parity space (rows {rows}, rank {rank})")]
    OrderTooSmall { s: usize, rows: usize, rank: usize },

    #[error("ill-conditioned covariance: {0}")]
    Conditioning(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
