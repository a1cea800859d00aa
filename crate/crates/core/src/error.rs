use std::path::PathBuf;

/// Errors raised across the calibration library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid {entity}: {rule}: {message}")]
    Invariant {
        entity: String,
        rule: &'static str,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("demand for OD {od} is {value}, outside [0, {upper}]")]
    Bounds { od: usize, value: f64, upper: f64 },

    #[error("empty segment set")]
    EmptySegmentSet,

    #[error("segment {0} has no value in the supplied result or ground truth")]
    MissingSegment(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("empty seed list")]
    EmptySeeds,

    #[error("evaluation budget exhausted ({0} vectors)")]
    BudgetExhausted(usize),

    #[error("budget too small: need at least {needed}, got {got}")]
    BudgetTooSmall { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
