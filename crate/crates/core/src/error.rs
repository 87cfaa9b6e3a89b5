use std::io;

use thiserror::Error;

pub type Result<T, E = VsaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VsaError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    NonFiniteLoss { step: u64, loss: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl VsaError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        VsaError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        VsaError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        VsaError::Format(msg.into())
    }
}
