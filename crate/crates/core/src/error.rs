use std::fmt;

/// Errors raised while decoding the binary segment or checkpoint files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    UnsupportedVersion(u16),
    Truncated { context: &'static str },
    ShapeMismatch(String),
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic { expected, found } => write!(
                f,
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ),
            FormatError::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            FormatError::Truncated { context } => write!(f, "truncated file while reading {context}"),
            FormatError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(FormatError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<FormatError> for Error {
    fn from(e: FormatError) -> Self {
        Error::Format(e)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
