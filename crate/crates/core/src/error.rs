use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NpgaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NpgaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// The covariance matrix stayed non positive-definite after the single jitter retry.
    #[error("covariance matrix is not positive definite (retried with jitter {jitter:e})")]
    NumericalConditioning { jitter: f64 },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NpgaError {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        NpgaError::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        NpgaError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
