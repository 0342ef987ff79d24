//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or distribution dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An API contract was violated (e.g. non-scalar loss, empty group set).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numeric or structural parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A run configuration is malformed or internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite value.
    #[error("training error: {0}")]
    Training(String),

    /// A dataset could not be assembled as requested.
    #[error("data error: {0}")]
    Data(String),

    /// A binary container could not be parsed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Run records cannot be compared.
    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 config, 2 verification, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training(_) => 3,
            Error::Config(_) | Error::Parameter(_) => 1,
            _ => 1,
        }
    }
}
