use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, ordering, layout).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced a non-finite or singular intermediate.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training diverged; carries where it happened.
    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    Training {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    /// Invalid input to an operation that is not a programming error (empty dataset, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: unsupported format version {found} (this build reads version {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line harness:
    /// 2 for configuration/usage problems, 3 for numeric failures, 4 for I/O and file-format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Usage(_) | Error::Config(_) => 2,
            Error::Numeric(_) | Error::Training { .. } => 3,
            Error::Parse { .. } | Error::Version { .. } | Error::Io { .. } => 4,
        }
    }
}
