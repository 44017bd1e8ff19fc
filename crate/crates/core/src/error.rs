use thiserror::Error;

/// Errors raised by the numerical kernels, steppers and analysis drivers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("newton failed to converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("matrix is not skew-symmetric (asymmetry {0:.3e})")]
    NotSkew(f64),

    #[error("constraint rows are rank deficient")]
    RankDeficient,

    #[error("initial state violates the constraints (residual {0:.3e})")]
    InconsistentInitialState(f64),

    #[error("errors below noise floor, slope fit is meaningless")]
    BelowNoiseFloor,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Strips any step-index wrapping.
    pub fn root(&self) -> &Error {
        match self {
            Error::StepFailed { source, .. } => source.root(),
            e => e,
        }
    }
}
