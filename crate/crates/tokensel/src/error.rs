//! Crate-wide error type.
//!
//! Three failure families cover everything this library does: I/O, malformed
//! tensor files, and invalid arguments (shape mismatches, out-of-domain
//! values, degenerate masks). Keeping the enum small makes CLI reporting a
//! one-liner per failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed tensor file: wrong magic, truncated payload, bad header.
    #[error("{0}")]
    Format(String),

    /// Invalid argument: shape mismatch, out-of-domain value, degenerate mask.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
