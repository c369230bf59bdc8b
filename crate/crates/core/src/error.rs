use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A domain invariant was violated by otherwise well-formed input.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Malformed input record. `line` is 1-based, 0 when the whole file is at fault.
    #[error("{}:{line}: {field}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    /// A configuration value is missing its valid range or is unknown.
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        line: usize,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by unreadable or malformed input files and bad configuration.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Io { .. } | Error::Config { .. })
    }
}
