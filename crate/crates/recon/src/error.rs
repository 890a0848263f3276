use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("unknown method '{0}'")]
    UnknownMethod(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] tomo_core::TomoError),

    #[error(transparent)]
    Autodiff(#[from] tomo_autodiff::AdError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ReconError>;
