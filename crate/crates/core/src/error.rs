use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid probability distribution: {0}")]
    Distribution(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A labeled operation met a sample without a gold label.
    #[error("sample `{0}` has no label")]
    MissingLabel(String),

    #[error("teacher has no prediction for sample `{0}`")]
    MissingTeacher(String),

    #[error("report: {0}")]
    Report(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used as the prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Dimension { .. } => "dimension",
            Error::Distribution(_) => "distribution",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "argument",
            Error::MissingLabel(_) => "label",
            Error::MissingTeacher(_) => "teacher",
            Error::Report(_) => "report",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
