use thiserror::Error;

#[derive(Debug, Error)]
pub enum DdaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A participant or message violated the auction protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// An operation was called in an auction state that does not allow it.
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DdaError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DdaError {
    DdaError::InvalidInput(msg.into())
}
