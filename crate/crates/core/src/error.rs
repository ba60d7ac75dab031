use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Shape or dimension mismatch; the message names the offending extents.
    Dim(String),
    /// Invalid argument (empty sample, degenerate batch, out-of-range value).
    Arg(String),
    /// Architecture string parse failure at a byte position.
    Parse { pos: usize, msg: String },
    /// Dataset ingestion or integrity failure.
    Data(String),
    /// Model/checkpoint container failure (magic, version, checksum, truncation).
    Format(String),
    /// Non-finite value encountered during training.
    Numeric(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(m) => write!(f, "dimension error: {m}"),
            Error::Arg(m) => write!(f, "invalid argument: {m}"),
            Error::Parse { pos, msg } => write!(f, "parse error at byte {pos}: {msg}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
