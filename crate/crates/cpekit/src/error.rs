use thiserror::Error;

/// Error type shared by the whole toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient length: {0}")]
    InsufficientLength(String),
    #[error("design infeasible: {0}")]
    DesignInfeasible(String),
    #[error("unsupported case: {0}")]
    Unsupported(String),
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
