use thiserror::Error;

/// Errors produced by map generation, convolution and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate ({row}, {col}): must be finite")]
    InvalidCoordinate { row: f64, col: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("convolution produces no output: {0}")]
    EmptyOutput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
