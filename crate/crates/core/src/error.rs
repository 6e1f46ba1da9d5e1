use thiserror::Error;

/// Errors raised by state construction, measurement simulation and reconstruction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("mean photon number must be non-negative, got {0}")]
    NegativePhotonNumber(f64),

    #[error("quadrature vector is not unit norm (|v| = {0})")]
    NotNormalized(f64),

    #[error("covariance matrix is unphysical: min symplectic eigenvalue {min_eig} < 1/2")]
    Unphysical { min_eig: f64 },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("covariance matrix is singular")]
    Singular,

    #[error("non-positive quadrature variance {0} (corrupt covariance input)")]
    NonPositiveVariance(f64),

    #[error("invalid homodyne configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown setting token `{0}`")]
    UnknownSetting(String),

    #[error("missing setting `{0}`")]
    MissingSetting(String),

    #[error("duplicate setting `{0}`")]
    DuplicateSetting(String),

    #[error("setting `{setting}` has {count} samples; at least 2 are required")]
    TooFewSamples { setting: String, count: usize },

    #[error("f_policy average_ef needs the `f:x` and `f:y` records, which this dataset lacks")]
    MissingFRecords,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the failure came from the filesystem rather than from bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
