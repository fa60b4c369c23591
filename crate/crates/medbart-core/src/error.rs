//! Error type shared by the estimation modules.

use alloc::string::String;
use alloc::vec::Vec;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A required input column is missing or mis-mapped.
    #[error("schema error: missing column `{0}`")]
    Schema(String),

    /// A cell could not be parsed. Row index is zero-based over data rows.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Dataset-level invariant failure detected outside `validate`.
    #[error("validation error: {0}")]
    Validation(String),

    /// Design matrix is rank deficient; offending columns by name.
    #[error("singular design: collinear columns {columns:?}")]
    SingularDesign { columns: Vec<String> },

    /// Not enough residual degrees of freedom to estimate a variance.
    #[error("degrees of freedom exhausted: {0}")]
    DegreesOfFreedom(String),

    /// No covariate has at least two distinct values to split on.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// A numeric operation produced a non-finite or unusable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Two independent computation routes disagreed beyond tolerance.
    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    /// Row/column counts do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
