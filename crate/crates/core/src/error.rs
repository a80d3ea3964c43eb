use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training stack.
///
/// Every variant maps onto a short category string (see [`Error::category`])
/// so the command-line front end can report failures on a single
/// machine-parseable line.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition or type invariant.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// Two sequences that must line up did not.
    #[error("alignment mismatch: {what} ({left} vs {right})")]
    Alignment {
        what: String,
        left: usize,
        right: usize,
    },

    /// The experimental protocol was broken (shared vocabulary, dev-set
    /// hygiene, lineage rules).
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A gradient or parameter became NaN or infinite.
    #[error("non-finite value in `{parameter}` at update {update}")]
    NonFinite { parameter: String, update: usize },

    /// A file could not be parsed.
    #[error("{path}: malformed input at line {line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn protocol(reason: impl Into<String>) -> Self {
        Error::Protocol(reason.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }

    /// Stable short name of the error class.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::Alignment { .. } => "alignment",
            Error::Protocol(_) => "protocol",
            Error::NonFinite { .. } => "numerical",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
