use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config: {field} {constraint}")]
    Validation { field: String, constraint: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: &str, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            constraint: constraint.into(),
        }
    }

    /// True for errors caused by a bad configuration or bad user input.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Usage(_)
        )
    }

    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_) | Error::Domain(_) | Error::Dimension { .. })
    }
}
