use std::path::PathBuf;

/// Crate-wide error type.
///
/// `exit_code` groups errors into the process exit classes used by the
/// command-line tool: 1 usage, 2 I/O, 3 internal invariant violation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid base {byte:?} at position {pos}")]
    InvalidBase { byte: char, pos: usize },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: corrupt data at byte {offset}: {msg}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("stats file mismatch: {field} is {found}, expected {expected}")]
    StatsMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::StatsMismatch { .. } => 1,
            Error::InvalidBase { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Corrupt { .. } => 2,
            Error::Internal(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
