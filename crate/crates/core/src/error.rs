use thiserror::Error;

/// Errors produced by the message algebra, problem model, solvers and harness.
#[derive(Debug, Error)]
pub enum SblError {
    /// A product of messages was requested but every factor was flat.
    #[error("no information: every message in the product is flat")]
    NoInformation,

    /// An input violated a documented precondition.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// The run configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The input data makes a quantity undefined (e.g. an all-zero vector).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SblError>;

pub(crate) fn contract(msg: impl Into<String>) -> SblError {
    SblError::ContractViolation(msg.into())
}
