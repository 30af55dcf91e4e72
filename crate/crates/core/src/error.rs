use thiserror::Error;

/// Errors raised by the particle-filter library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("degenerate ensemble: all particle positions coincide")]
    DegenerateEnsemble,

    #[error("matrix is not symmetric positive definite")]
    NotSymmetricPD,

    #[error("covariance is singular (smallest eigenvalue {min_eigenvalue:e} <= {threshold:e})")]
    SingularCovariance { min_eigenvalue: f64, threshold: f64 },

    #[error("Galerkin matrix is ill-conditioned (condition estimate {cond:e}); set a ridge or change basis")]
    IllConditioned { cond: f64 },

    #[error("kernel bandwidth {epsilon} underflows for row {row}")]
    BandwidthUnderflow { epsilon: f64, row: usize },

    #[error("Fisher information matrix is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularFisher { min_eigenvalue: f64 },

    #[error("normalizing constant overflows for the given parameter")]
    QuadratureOverflow,

    #[error("grid density underflows to zero at interior node {node}")]
    SingularSystem { node: usize },

    #[error("particle {particle} left the finite range at step {step}")]
    NonFinitePosition { step: usize, particle: usize },

    #[error("no oracle applies: {0}")]
    OracleUnavailable(String),

    #[error("{backend} backend failed at step {step}: {source}")]
    Backend {
        backend: &'static str,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    /// True for configuration/argument problems, as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidArgument { .. })
    }
}
