use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A data file or manifest violates its contract.
    #[error("data contract violated: {0}")]
    Data(String),

    /// Non-finite loss, disconnected gradients and similar training failures.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Shape(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Data(_) => "data_contract",
            Error::Numerical(_) => "numerical_failure",
            Error::Io(_) => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 usage, 3 data contract, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
