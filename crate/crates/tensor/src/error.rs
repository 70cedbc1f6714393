use thiserror::Error;

/// Failures raised by tensor construction and graph operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible with the operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An operation parameter (groups, permutation, split count, ...) is invalid.
    #[error("config error: {0}")]
    Config(String),
    /// A documented precondition of the call was violated.
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Dimension(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Config(msg.into()))
}
