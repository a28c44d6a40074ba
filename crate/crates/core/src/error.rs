use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context}: {value}")]
    NonFinite { context: String, value: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("condition has zero probability mass for observation {observation}")]
    DegenerateCondition { observation: usize },

    #[error("joint action space of size {size} exceeds enumeration cap {cap}")]
    EnumerationCap { size: usize, cap: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

/// Fails with [`Error::NonFinite`] when `value` is NaN or infinite.
pub(crate) fn ensure_finite(context: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
            value,
        })
    }
}
