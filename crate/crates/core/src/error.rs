use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numeric failure{}: {message}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    Numeric {
        node: Option<usize>,
        message: String,
    },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("instance too large: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numeric(node: Option<usize>, message: impl Into<String>) -> Self {
        Error::Numeric {
            node,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from the numerics rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
