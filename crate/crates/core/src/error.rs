use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("kernel {kernel_h}x{kernel_w} does not fit image {image_h}x{image_w}")]
    KernelTooLarge {
        kernel_h: usize,
        kernel_w: usize,
        image_h: usize,
        image_w: usize,
    },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("connection lost: {0}")]
    ConnectionLost(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("remote error: {0}")]
    RemoteError(String),

    #[error("denoiser has no differentiable x0 path and finite differences are disabled")]
    NonDifferentiableDenoiser,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Error::InvalidRange(msg.into())
    }
}
