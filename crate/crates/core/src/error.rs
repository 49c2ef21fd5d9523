use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A level scheme that cannot support the write/read dipole transitions.
    #[error("invalid level scheme: {0}")]
    InvalidScheme(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported log format: {0}")]
    Format(String),

    #[error("missing measurement settings: {}", .0.join(", "))]
    MissingSettings(Vec<String>),

    /// Degenerate input, vanishing denominators, failed convergence.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage, 2 data/parse, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::InvalidScheme(_) => 1,
            Error::Parse { .. } | Error::Format(_) | Error::MissingSettings(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
            Error::File { source, .. } => source.exit_code(),
        }
    }
}
