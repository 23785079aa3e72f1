use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    NonConvergence(String),

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::NonConvergence(_) | CliError::Failed(_) => ExitCode::from(1),
            CliError::Config(_) | CliError::Io(_) => ExitCode::from(2),
        }
    }
}

impl From<pool_ldp::Error> for CliError {
    fn from(e: pool_ldp::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::NonConvergence(e.to_string())
        }
    }
}
