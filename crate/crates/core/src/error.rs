use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("storage Hessian at the origin is singular (condition estimate {condition:.3e})")]
    SingularHessian { condition: f64 },

    #[error("element count must be at least 1, got {0}")]
    InvalidElementCount(usize),

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(&'static str),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("energy increased by {increase:.3e} in one step (allowed {allowed:.3e})")]
    StepRejected { increase: f64, allowed: f64 },

    #[error("step failed at t = {time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory needs at least {needed} recorded states, has {found}")]
    InsufficientResolution { needed: usize, found: usize },

    #[error("eigenvalue solver failed")]
    EigenSolverFailure,

    #[error("trajectory is empty")]
    EmptyTrajectory,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Strips any `AtTime` wrapping.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }
}
