use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("outside the domain of the operation: {0}")]
    Domain(String),

    #[error("{what} did not converge after {iterations} iterations (last step {last_step:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_step: f64,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:e})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },

    #[error("sample size {got} exceeds the exact solver cap of {cap}; subsample the inputs")]
    OverCap { got: usize, cap: usize },

    #[error("rejection sampler gave up after {proposals} proposals (sigma = {sigma})")]
    RejectionExhausted { proposals: usize, sigma: f64 },

    #[error("stale tape: {0}")]
    StaleTape(String),

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
