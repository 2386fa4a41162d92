use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("detector returned no detections")]
    NoDetections,

    #[error("target box could not be re-identified")]
    NoMatch,

    #[error("adapter does not offer the `{0}` capability")]
    CapabilityMissing(&'static str),

    #[error("adapter error: {0}")]
    Adapter(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("incompatible peer: client speaks version {client}, server speaks {server}")]
    IncompatiblePeer { client: u32, server: u32 },

    #[error("bridge connection lost")]
    ConnectionLost,

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::InvalidDimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
