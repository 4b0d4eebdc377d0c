//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside its admissible range.
    #[error("domain error in {what}: {details}")]
    Domain { what: &'static str, details: String },

    /// Vector/layout lengths do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-side contract was violated (e.g. aggregation weights not
    /// summing to one).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A link with zero channel gain cannot carry any rate.
    #[error("no coverage: {0}")]
    NoCoverage(String),

    /// The allocation instance admits no feasible point; the report names
    /// the violating devices.
    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(what: &'static str, details: impl Into<String>) -> Self {
        Error::Domain {
            what,
            details: details.into(),
        }
    }
}
