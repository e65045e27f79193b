use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] raea_core::Error),
}

impl CliError {
    /// 2 for configuration errors, 4 for numeric failures, 3 for every
    /// other input, parse or validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(raea_core::Error::Numeric(_)) => 4,
            CliError::Core(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}
