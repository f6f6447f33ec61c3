use alloc::boxed::Box;
use alloc::string::String;

use crate::estimators::SubDistEstimate;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an input value failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A query point fell outside the domain of a function.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// An estimate violates the feasibility constraints required by the
    /// operation (monotone components in [0, 1], finite log-likelihood).
    #[error("infeasible estimate: {0}")]
    Infeasible(String),

    /// The maximum-likelihood solver exhausted its iteration budget without
    /// certifying optimality. Carries the best iterate found.
    #[error("solver did not converge after {iterations} sweeps (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<SubDistEstimate>,
    },

    /// The limit-process fixed-point iteration exhausted its budget.
    #[error(
        "fixed-point iteration did not converge after {iterations} steps (residual {residual:.3e})"
    )]
    FixedPointDiverged { iterations: usize, residual: f64 },

    /// A localized-process shift is undefined because the fitted component
    /// has no jump before the centering time.
    #[error("component {cause} has no jump before the centering point")]
    NoJumpBeforeCenter { cause: usize },

    /// One replication of an experiment failed; the run is aborted.
    #[error("replication {rep} at sample size {size} failed: {source}")]
    ReplicationFailed {
        size: usize,
        rep: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = core::result::Result<T, Error>;
