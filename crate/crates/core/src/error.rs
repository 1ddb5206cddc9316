use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants are grouped by failure class rather than by module so callers
/// (the CLI in particular) can map them onto exit codes without string
/// matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layouts or lengths do not line up.
    #[error("structural error: {0}")]
    Structural(String),
    /// A scalar argument is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// An operation was called on a state that cannot support it.
    #[error("state error: {0}")]
    State(String),
    #[error("codec error: {0}")]
    Codec(String),
    /// Input data is missing or insufficient.
    #[error("data error: {0}")]
    Data(String),
    /// Class prototypes average to the zero vector.
    #[error("degenerate class {class}: prototype mean is the zero vector")]
    DegenerateClass { class: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Training produced a non-finite loss.
    #[error("numeric abort at step {step}: {what}")]
    NumericAbort { step: usize, what: String },
    #[error("fit error: {0}")]
    Fit(String),
    /// A statistic is mathematically undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("config error: {0}")]
    Config(String),
    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips any `Stage` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
