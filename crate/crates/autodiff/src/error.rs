use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward called without a live forward tape")]
    BackwardWithoutForward,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] tomo_core::TomoError),
}

pub type Result<T> = std::result::Result<T, AdError>;
