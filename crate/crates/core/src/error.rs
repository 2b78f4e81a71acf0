use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{survived} of {attempted} simulated cells survived past the horizon {horizon}; is lambda >= mu?")]
    SurvivalRateTooHigh {
        survived: usize,
        attempted: usize,
        horizon: f64,
    },

    #[error("true dead fraction {p} at t = {t} cannot be logit-transformed")]
    DegenerateLogit { t: f64, p: f64 },

    #[error("only {retained} design points retained at t = {t} (need at least {required})")]
    InsufficientDesign {
        t: f64,
        retained: usize,
        required: usize,
    },

    #[error("least-squares basis is rank deficient")]
    RankDeficient,

    #[error("covariance factorization failed after jitter escalation")]
    Factorization,

    #[error("diagnostics failed: {0}")]
    Diagnostics(String),

    #[error("log target returned NaN at iteration {iteration} (state {state:?})")]
    NanTarget { iteration: usize, state: Vec<f64> },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
