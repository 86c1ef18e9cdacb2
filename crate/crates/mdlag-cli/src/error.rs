//! Command errors and their process exit codes.

use mdlag::MdlagError;
use thiserror::Error;

/// Exit code of a configuration or input error.
pub const EXIT_CONFIG: u8 = 2;
/// Exit code of a numerical failure.
pub const EXIT_NUMERICAL: u8 = 3;
/// Exit code of a resource guard refusal.
pub const EXIT_GUARD: u8 = 4;

/// Anything that can stop a command.
#[derive(Debug, Error)]
pub enum CliError {
    /// Failure reported by the library.
    #[error(transparent)]
    Model(#[from] MdlagError),

    /// A CSV report could not be written.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// A report or output directory could not be written.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A JSON report or configuration file could not be (de)serialized.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Inconsistent command-line options.
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(MdlagError::NotPositiveDefinite { .. } | MdlagError::NonFinite(_)) => EXIT_NUMERICAL,
            CliError::Model(MdlagError::ResourceGuard(_)) => EXIT_GUARD,
            _ => EXIT_CONFIG,
        }
    }
}

/// Result alias for commands.
pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Model(MdlagError::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Model(MdlagError::NonFinite("x".into())).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::Model(MdlagError::NotPositiveDefinite { size: 3 }).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::Model(MdlagError::ResourceGuard("x".into())).exit_code(), EXIT_GUARD);
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_CONFIG);
    }
}
