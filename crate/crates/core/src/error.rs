use thiserror::Error;

use crate::access::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row ({level}, {z}, {x}) is outside the access structure")]
    RowOutOfRange { level: usize, z: usize, x: usize },

    #[error("pixel ({z}, {x}, {y}) is outside the volume")]
    PixelOutOfRange { z: usize, x: usize, y: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("structure failed validation: {0}")]
    Invalid(#[from] Violation),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Format(#[from] crate::io::FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
