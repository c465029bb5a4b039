use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: impl ToString, rhs: impl ToString) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by user-supplied configuration or dimensions.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Shape { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
