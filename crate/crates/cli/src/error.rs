use std::path::PathBuf;

use kdey_core::QuantError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("results schema violation on line {line}: {message}")]
    Schema { line: usize, message: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
