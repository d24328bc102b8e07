use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed or invalid cell in tabular input. Rows are 1-based with
    /// the header on row 1.
    #[error("{message}, row {row}, column {column}")]
    Parse {
        message: String,
        row: u64,
        column: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("{0}")]
    Fit(String),

    #[error("{0}")]
    Analysis(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short module-level tag used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Csv(_) => "parse",
            Error::Invalid(_) => "validation",
            Error::Fit(_) => "fit",
            Error::Analysis(_) => "analysis",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
