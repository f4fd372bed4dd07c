use thiserror::Error;

/// Errors raised anywhere in the planning stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("parse error at `{field}` (line {line}, column {column}): {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("non-finite output from the {head} head")]
    NonFinite { head: &'static str },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite loss at scenario `{scenario}` tick {tick}")]
    NonFiniteLoss { scenario: String, tick: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Geometry(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::Checkpoint(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
