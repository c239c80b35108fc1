use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A covariance matrix was not numerically positive definite.
    ///
    /// `minor` is the 1-based order of the first leading minor that failed.
    #[error("{backend} covariance is not positive definite (leading minor {minor} failed)")]
    Factorization { backend: &'static str, minor: usize },

    /// Adaptive quadrature exhausted its subdivision budget.
    #[error("quadrature did not converge: estimated error {residual:e} after {intervals} intervals")]
    Quadrature { residual: f64, intervals: usize },

    /// Generic numerical breakdown (root finding, eigen-decomposition, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An optimizer stopped without meeting its convergence criterion.
    /// The best parameter vector found is attached.
    #[error("estimation did not converge after {iterations} iterations")]
    Estimation { best: Vec<f64>, iterations: usize },

    /// The MCMC starting state has a non-finite log-posterior.
    #[error("initial log-posterior is not finite: {0}")]
    Initialization(String),

    /// Malformed or inconsistent input data / configuration files.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Whether the error stems from numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. }
                | Error::Quadrature { .. }
                | Error::Numerical(_)
                | Error::Estimation { .. }
                | Error::Initialization(_)
        )
    }
}
