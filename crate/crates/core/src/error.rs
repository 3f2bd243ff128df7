use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operation requires a {expected} space")]
    SpaceMismatch { expected: &'static str },

    #[error("total masses differ: source {source_mass}, target {target_mass}")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("problem has {entries} cost entries, above the exact-solver cap of {cap}; use the entropic solver")]
    SizeCapExceeded { entries: usize, cap: usize },

    #[error("{0}")]
    Degenerate(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
