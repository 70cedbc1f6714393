use thiserror::Error;
use xlm_tensor::TensorError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    /// True for I/O and file-format failures, false for contract and
    /// configuration failures.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, CoreError::Format(_) | CoreError::Io { .. })
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Config(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Contract(msg.into()))
}

pub(crate) fn format<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Format(msg.into()))
}
