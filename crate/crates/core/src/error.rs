use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("integration failure: non-finite state")]
    IntegrationFailure,

    #[error("invalid unscented transform tuning: n + lambda = {0} must be positive")]
    InvalidTuning(f64),

    #[error("observation covariance block is singular")]
    SingularObservation,

    #[error("filter collapsed at time {time}: all weights are zero")]
    FilterCollapse { time: usize },

    #[error("conditional acceptance rate undefined: every replicate has zero likelihood")]
    UndefinedCar,

    #[error("filter diverged at time {time}: non-finite moments")]
    Divergence { time: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
