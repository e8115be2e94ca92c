use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("expected rank {expected}, got rank {actual}")]
    Rank { expected: usize, actual: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PhmError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(PhmError::Dimension(msg.into()))
}
