use thiserror::Error;

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("unrealizable: {0}")]
    Unrealizable(String),
    #[error("sequence of length {len} exceeds context of {max}")]
    Length { len: usize, max: usize },
    #[error("state error: {0}")]
    State(String),
    #[error("infeasible tilt target: {0}")]
    InfeasibleTarget(String),
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),
    #[error("checkpoint version mismatch: {0}")]
    Version(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
