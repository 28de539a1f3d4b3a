use std::process::ExitCode;

use thiserror::Error;
use twospeed::dp::SolveError;

/// Exit code when the configuration (or a command-line value) is invalid.
pub const EXIT_CONFIG: u8 = 3;
/// Exit code when value iteration hits its sweep limit.
pub const EXIT_CONVERGENCE: u8 = 4;
/// Exit code when the distilled law fails a stability check.
pub const EXIT_VERIFICATION: u8 = 5;
/// Exit code for unreadable or unwritable files.
pub const EXIT_IO: u8 = 6;
/// Anything else (fit failure, infeasible start state, ...).
pub const EXIT_OTHER: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Convergence(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::NotConverged { .. } => CliError::Convergence(e.to_string()),
            SolveError::Model(_)
            | SolveError::InvalidGrid(_)
            | SolveError::InvalidTermination(_)
            | SolveError::InvalidOptions(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}
