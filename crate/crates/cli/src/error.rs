use std::path::Path;

use thiserror::Error;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config, schema mismatch. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// The computation ran but an analytical or convergence criterion
    /// failed. Exit 1.
    #[error("{0}")]
    Analytic(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Analytic(_) => 1,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Usage(format!("{}: {err}", path.display()))
    }
}

impl From<bilevel_core::Error> for CliError {
    fn from(err: bilevel_core::Error) -> Self {
        use bilevel_core::Error as E;
        match err {
            E::OracleFailure { .. } | E::Certification(_) => Self::Analytic(err.to_string()),
            E::Dimension { .. } | E::InvalidModel(_) | E::InvalidProx(_) | E::InvalidConfig(_) => {
                Self::Usage(err.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
