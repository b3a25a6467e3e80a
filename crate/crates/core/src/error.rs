use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NadsError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("{what} is not positive definite: leading minor of order {minor} is not positive")]
    NotPositiveDefinite { what: &'static str, minor: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate precision matrix: {0}")]
    DegeneratePrecision(String),

    #[error(
        "exact alarm distribution needs {needed} outside coordinates but the cap is {cap}; \
         use the lemma2 approximation for this many sensors"
    )]
    CapExceeded { needed: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, NadsError>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> NadsError {
    NadsError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
