use thiserror::Error;

/// Errors raised by the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain on which the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An integral grew beyond the range of `f64`.
    #[error("overflow while evaluating {0}")]
    Overflow(String),

    /// An improper integral did not settle.
    #[error("integral diverges: {0}")]
    Divergent(String),

    /// An iterative routine ran out of budget.
    #[error("no convergence in {what} after {iterations} iterations")]
    Convergence { what: String, iterations: usize },

    /// Bracket expansion never produced a sign change.
    #[error("no root: {0}")]
    NoRoot(String),

    /// Expression parse failure, `position` is a byte offset into the source.
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    /// A comparison between the game and control thresholds failed.
    #[error("ordering violated: {0}")]
    OrderingViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
