//! Crate-wide error type.

use thiserror::Error;

use crate::hankel::PeDiagnostic;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Too little data for the requested operation; `minimum` is the
    /// smallest length that could satisfy it.
    #[error("insufficient data: have {have} samples, need at least {minimum}: {context}")]
    InsufficientData {
        have: usize,
        minimum: usize,
        context: String,
    },

    /// The input sequence failed the persistent-excitation rank test.
    #[error("not persistently exciting: {0}")]
    NotPersistentlyExciting(PeDiagnostic),

    /// A text file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
