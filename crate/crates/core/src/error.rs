use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty grid")]
    EmptyGrid,
    #[error("non-finite pixel")]
    NonFinitePixel,
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("{message}, line {line}")]
    Parse { line: usize, message: String },
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("degenerate labels")]
    DegenerateLabels,
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{events} distinct events cannot fill {k} folds")]
    TooFewEvents { events: usize, k: usize },
    #[error("degenerate fold {fold}: {reason}")]
    DegenerateFold { fold: usize, reason: String },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate variable")]
    DegenerateVariable,
    #[error("missing coordinates for event {0}")]
    MissingCoordinates(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than an internal failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
