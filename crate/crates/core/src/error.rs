//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input had the wrong shape for the operation.
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An input set that must be non-empty was empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// An argument or configuration value is out of contract.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A caller broke an API contract (e.g. backward without a matching
    /// forward trace).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Training produced a non-finite loss or gradient and was aborted.
    #[error("non-finite {what} at step {step}; training aborted")]
    NonFinite { what: &'static str, step: u64 },

    /// A non-finite value surfaced during inference; names the offending layer.
    #[error("non-finite value in layer {layer} ({context})")]
    NonFiniteLayer { layer: usize, context: &'static str },

    /// A persisted artifact failed validation on load.
    #[error("load error: {0}")]
    Load(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
