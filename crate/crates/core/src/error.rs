use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("numerical failure in {what} (residual {residual:e})")]
    Numerical { what: String, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("retraction step too large (condition number {cond:e})")]
    StepTooLarge { cond: f64 },

    #[error("ill-conditioned mass matrix (condition number {0:e})")]
    IllConditioned(f64),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error at line {line}, column {column}: {msg}")]
    Schema {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by floating point blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. }
                | Error::Domain(_)
                | Error::StepTooLarge { .. }
                | Error::IllConditioned(_)
                | Error::Divergence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
