use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported checkpoint version {0:?}")]
    UnsupportedVersion(String),

    #[error("incompatible shapes: {0}")]
    IncompatibleShapes(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("input has {count} negative entries")]
    NegativeInput { count: usize },

    #[error("concept {concept} collapsed to zero twice")]
    DegenerateRank { concept: usize },

    #[error("k = {k} exceeds the maximum {max}")]
    KTooLarge { k: usize, max: usize },

    #[error("loss diverged to a non-finite value at step {step}")]
    Diverged { step: usize },

    #[error("missing field: {0}")]
    MissingField(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("response schema error: {message}")]
    Schema { message: String, raw: String },

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: i64,
        bound: usize,
    },

    #[error("target sample is already classified correctly")]
    TargetAlreadyCorrect,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable error code.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFinite { .. } => "NonFinite",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::IncompatibleShapes(_) => "IncompatibleShapes",
            Error::DimMismatch(_) => "DimMismatch",
            Error::InvalidLabels(_) => "InvalidLabels",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptySplit(_) => "EmptySplit",
            Error::NegativeInput { .. } => "NegativeInput",
            Error::DegenerateRank { .. } => "DegenerateRank",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::Diverged { .. } => "NonFinite",
            Error::MissingField(_) => "MissingField",
            Error::Endpoint(_) => "EndpointError",
            Error::Schema { .. } => "SchemaError",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::TargetAlreadyCorrect => "TargetAlreadyCorrect",
            Error::Json(_) => "SchemaError",
        }
    }
}
