use thiserror::Error;

/// Errors raised by model construction, the reference oracle and the
/// certification engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid proximity operator: {0}")]
    InvalidProx(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The reference solver did not reach its tolerance. Tolerances must be
    /// revisited, results are never silently degraded.
    #[error("oracle failed to converge after {iterations} iterations (residual {residual:e})")]
    OracleFailure { iterations: usize, residual: f64 },

    #[error("certification failed: {0}")]
    Certification(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what: what.to_string(),
            expected,
            got,
        })
    }
}
