use thiserror::Error;

/// Errors produced by the inference, selection and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label {label} out of range for {labels} labels")]
    LabelOutOfRange { label: usize, labels: usize },

    #[error("option {option} out of range for {options} options")]
    OptionOutOfRange { option: usize, options: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("mixture weights are all zero")]
    ZeroWeights,

    #[error("predictive evidence must be positive, got {0}")]
    NonPositiveEvidence(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mixand {index}: {source}")]
    Mixand {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cell {cell}, run {run}: {source}")]
    Episode {
        cell: String,
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("step {step}: {source}")]
    Step {
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

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn into_step(self, step: usize) -> Self {
        Error::Step { step, source: Box::new(self) }
    }

    pub fn into_episode(self, cell: &str, run: usize) -> Self {
        Error::Episode { cell: cell.to_string(), run, source: Box::new(self) }
    }
}
