use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("assumption violated ({assumption}): {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("singular {what} (condition estimate {condition:.3e})")]
    Singular { what: String, condition: f64 },

    #[error("{what} is not symmetric positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { what: String, min_eigenvalue: f64 },

    #[error("zeros on or near the unit circle: {0}")]
    Marginal(String),

    #[error("iteration did not converge: {0}")]
    NonConvergent(String),

    #[error("covariance blow-up (trace {trace:.3e} exceeds limit {limit:.3e}); use the SISE engine for the equivalent limit")]
    NumericalLimit { trace: f64, limit: f64 },

    #[error(
        "plain SISE is not stable for this system ({0}); use the factorization module (outer-pipeline engine) instead"
    )]
    UnstableSise(String),

    #[error("no applicable estimator variant: {0}")]
    NoApplicableVariant(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(step: usize, err: Error) -> Error {
        match err {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Strips any step wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}
