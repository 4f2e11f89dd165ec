use std::path::PathBuf;

/// Errors raised across the crate. The variant decides the CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed an argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration record violates its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is malformed or does not fit the request.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric guard tripped (singular matrix, non-finite loss, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;
