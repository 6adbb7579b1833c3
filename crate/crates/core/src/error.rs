use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Dimension(String),

    #[error("{path}: byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Generation(String),

    #[error("{0}")]
    Normalization(String),

    #[error("{0}")]
    Metric(String),

    #[error("{0}")]
    Singular(String),

    #[error("{0}")]
    Training(String),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI as `code: message`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension_error",
            Error::Format { .. } => "format_error",
            Error::Io { .. } => "io_error",
            Error::Config(_) => "config_error",
            Error::Generation(_) => "generation_error",
            Error::Normalization(_) => "normalization_error",
            Error::Metric(_) => "metric_error",
            Error::Singular(_) => "singular_error",
            Error::Training(_) => "training_error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
