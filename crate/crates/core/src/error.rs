use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A data row failed parsing or a hard physical invariant.
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid specimen: {0}")]
    InvalidSpecimen(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("model is not fitted: {0}")]
    NotFitted(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("formula domain violation in {code}: {message}")]
    FormulaDomain { code: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage precondition failed: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl Error {
    /// Process exit status: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Row { .. }
            | Error::InvalidSpecimen(_)
            | Error::MissingColumn(_)
            | Error::DimensionMismatch { .. }
            | Error::Precondition(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::UndefinedCorrelation(_) | Error::NotFitted(_) | Error::FormulaDomain { .. } | Error::Numeric(_) => 3,
        }
    }
}
