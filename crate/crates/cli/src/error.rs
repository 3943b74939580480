use thiserror::Error;

use qttbs_core::QttError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed config file.
    #[error("config: {0}")]
    Config(String),

    /// Config parsed but describes an invalid run.
    #[error("validation: {0}")]
    Validation(String),

    #[error("solver failure: {0}")]
    Solver(#[from] QttError),

    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 1,
            CliError::Solver(_) | CliError::Output(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
