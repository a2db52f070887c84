use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("no killable stable configuration for: {}", .0.join(", "))]
    EmptyArchive(Vec<String>),
    #[error("missing artifacts (run the earlier steps first): {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error(transparent)]
    Core(#[from] nnmut_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::EmptyArchive(_) => 3,
            CliError::Missing(_) | CliError::Core(_) | CliError::Csv(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
