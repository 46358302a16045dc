use std::io;
use std::path::PathBuf;

use crate::finding::Finding;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("interval error: end {end} precedes start {start}")]
    Interval { start: String, end: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("type error at row {row}, column `{column}`: {message}")]
    Type {
        row: usize,
        column: String,
        message: String,
    },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("schema conflict on append: {0}")]
    SchemaConflict(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("duplicate {0}")]
    Duplicate(String),

    #[error("sanity check failed with {} finding(s); first: {}", .0.len(), .0.first().map(|f| f.message.as_str()).unwrap_or(""))]
    SanityCheck(Vec<Finding>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration, arguments or schema declarations.
    Validation,
    /// The data itself is inconsistent, corrupt or fails integrity checks.
    DataIntegrity,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Type { .. }
            | Error::Corrupt(_)
            | Error::SchemaConflict(_)
            | Error::Integrity(_)
            | Error::SanityCheck(_)
            | Error::Interval { .. } => ErrorClass::DataIntegrity,
            _ => ErrorClass::Validation,
        }
    }
}
