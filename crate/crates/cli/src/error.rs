use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lvgm::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: u64, column: usize, message: String },

    #[error("invalid grid '{text}': {reason}")]
    Grid { text: String, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
