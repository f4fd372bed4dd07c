use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Core(#[from] conplan::Error),
}

impl CliError {
    /// Process exit code: 1 usage, 2 validation, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) | CliError::Config { .. } => 2,
            CliError::Core(conplan::Error::Io { source, .. })
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                2
            }
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
