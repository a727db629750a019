use std::fmt;
use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug)]
pub enum Error {
    /// Tensor/map dimensions do not line up. Carries both shapes.
    Shape { context: String, expected: String, got: String },
    /// Invalid argument outside the shape system (bad ranges, empty inputs, ...).
    Argument(String),
    /// Invalid or incomplete configuration (missing params, unknown keys, ...).
    Config(String),
    /// A numeric quantity became NaN or infinite.
    NonFinite { what: String, iteration: Option<u64> },
    /// Training failed to make progress (divergence without overflow).
    Training(String),
    /// Filesystem failure with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// Image decode/encode failure.
    Image { path: PathBuf, message: String },
    /// Malformed or corrupt model file.
    ModelFormat(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { context, expected, got } => {
                write!(f, "shape mismatch in {context}: expected {expected}, got {got}")
            }
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite { what, iteration: Some(it) } => {
                write!(f, "non-finite {what} at iteration {it}")
            }
            Error::NonFinite { what, iteration: None } => write!(f, "non-finite {what}"),
            Error::Training(msg) => write!(f, "training failure: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Image { path, message } => {
                write!(f, "image error on {}: {message}", path.display())
            }
            Error::ModelFormat(msg) => write!(f, "bad model file: {msg}"),
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

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl fmt::Display, got: impl fmt::Display) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
