use thiserror::Error;

/// Failures split by exit code: setup problems exit 1, anything after the
/// run has started exits 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn runtime(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {err}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
