use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("kernel matrix is ill-conditioned: Cholesky failed even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "sampler accepted none of {iterations} proposals; reduce the step size (epsilon = {epsilon})"
    )]
    NoAcceptance { iterations: usize, epsilon: f64 },

    #[error("adaptive step {step}: {source}")]
    AdaptiveStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("experiment {label}: {source}")]
    Experiment {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AdaptiveStep {
            step,
            source: Box::new(self),
        }
    }
}
