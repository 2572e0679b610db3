use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure contracts of the
/// individual subsystems.
#[derive(Debug, Error)]
pub enum HraError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("no fixed point: {0}")]
    NoFixedPoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HraError>;
