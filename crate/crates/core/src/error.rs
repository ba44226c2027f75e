use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variant names double as the machine-readable `error` field of the CLI's
/// stderr JSON, see [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("unsupported checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("image {width}x{height} is smaller than patch size {size}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        size: usize,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("region of interest out of bounds: {0}")]
    RoiBounds(String),

    #[error("no pixel above the detection threshold")]
    NoRoiFound,

    #[error("region of interest is empty")]
    EmptyRoi,

    #[error("infarction score undefined: red mask is empty")]
    UndefinedScore,

    #[error("could not pack collagen to fraction {phi} within {attempts} attempts")]
    PhantomPacking { phi: f64, attempts: usize },

    #[error("perplexity {perplexity} must lie in [1, {n})")]
    Perplexity { perplexity: f64, n: usize },

    #[error("all input rows are identical")]
    DegenerateInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::Numeric(_) => "NumericError",
            Error::GraphConsumed => "GraphConsumedError",
            Error::CheckpointFormat(_) => "CheckpointFormatError",
            Error::CheckpointCorrupt(_) => "CheckpointCorruptError",
            Error::ImageTooSmall { .. } => "ImageTooSmallError",
            Error::TrainingDiverged { .. } => "TrainingDivergedError",
            Error::RoiBounds(_) => "RoiBoundsError",
            Error::NoRoiFound => "NoRoiFoundError",
            Error::EmptyRoi => "EmptyRoiError",
            Error::UndefinedScore => "UndefinedScoreError",
            Error::PhantomPacking { .. } => "PhantomPackingError",
            Error::Perplexity { .. } => "PerplexityError",
            Error::DegenerateInput => "DegenerateInputError",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Image(_) => "ImageError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Process exit code: 2 for bad configuration, 3 for data/format
    /// problems, 4 for numeric or training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_)
            | Error::TrainingDiverged { .. }
            | Error::GraphConsumed
            | Error::UndefinedScore
            | Error::DegenerateInput => 4,
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
