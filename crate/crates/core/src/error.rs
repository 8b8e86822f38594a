use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("context feature {index} = {value} lies outside [0, 1]")]
    FeatureOutOfRange { index: usize, value: f64 },

    #[error("training diverged at step {step} (loss = {loss}); learning rate too large")]
    Diverged { step: usize, loss: f64 },

    #[error("confidence state corrupted: quadratic form {0} is negative")]
    CorruptedConfidence(f64),

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("session {session} exceeds the fixed horizon {horizon}")]
    HorizonOverrun { session: u64, horizon: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("series value {value} at t = {t} is not positive")]
    NonPositive { t: usize, value: f64 },

    #[error("malformed parameter file: {0}")]
    ParamFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
