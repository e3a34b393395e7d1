use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the toolkit returns this error.
///
/// Each variant maps to a stable machine-readable [`Error::code`] that the CLI
/// prints and the C ABI returns as a status value.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid configuration `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config { .. } => "config",
            Error::Input(_) => "input",
            Error::State(_) => "state",
            Error::Training { .. } => "training",
            Error::Degenerate(_) => "degenerate",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }

    /// Process exit status used by the CLI; 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension { .. } => 3,
            Error::Config { .. } => 4,
            Error::Input(_) => 5,
            Error::State(_) => 6,
            Error::Training { .. } => 7,
            Error::Degenerate(_) => 8,
            Error::Format(_) => 9,
            Error::Corruption(_) => 10,
            Error::Io { .. } => 11,
            Error::Serde(_) => 12,
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { field: field.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Prefixes the field path of a configuration error with `section`.
    pub fn in_section(self, section: &str) -> Self {
        match self {
            Error::Config { field, detail } => Error::Config { field: format!("{section}.{field}"), detail },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
