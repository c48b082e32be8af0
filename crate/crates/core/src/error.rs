//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by any module of the crate.
#[derive(Debug)]
pub enum Error {
    /// Array shapes or dimensions do not agree.
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    /// An input is mathematically degenerate (zero vector, empty caption, ...).
    DegenerateInput(&'static str),
    /// A computation produced or encountered a non-finite value.
    Numeric(String),
    /// Invalid configuration or inconsistent world parameters.
    Config(String),
    /// A requested keyword does not occur in the corpus split.
    Keyword(String),
    /// A token id is outside the vocabulary.
    Vocabulary(String),
    /// A persisted artifact is malformed.
    Format(String),
    /// Filesystem failure, with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// Matcher training diverged.
    Training(String),
}

/// Coarse error classes; the CLI maps each class to a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Format(_) => ErrorClass::Io,
            Error::Numeric(_) | Error::DegenerateInput(_) | Error::Training(_) => ErrorClass::Numeric,
            Error::Shape { .. }
            | Error::Config(_)
            | Error::Keyword(_)
            | Error::Vocabulary(_) => ErrorClass::Config,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                context,
                expected,
                got,
            } => write!(f, "{context}: shape mismatch, expected {expected}, got {got}"),
            Error::DegenerateInput(what) => write!(f, "degenerate input: {what}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Keyword(word) => write!(f, "keyword not found in corpus: {word:?}"),
            Error::Vocabulary(msg) => write!(f, "vocabulary error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Training(msg) => write!(f, "training error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
