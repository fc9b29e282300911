use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The `Display` output of each variant starts with the variant name so
/// that command-line users (and scripts grepping stderr) can key on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("SingularTransform: linear part has determinant {det:e}")]
    SingularTransform { det: f64 },

    #[error("InvalidPixelSize: pixel size must be positive and finite, got {0}")]
    InvalidPixelSize(f64),

    #[error("SchemaError: missing required column `{column}`")]
    SchemaError { column: String },

    #[error("ParseError: line {line}: {message}")]
    ParseError { line: u64, message: String },

    #[error("DuplicateId: cell id `{0}` appears more than once")]
    DuplicateId(String),

    #[error("TooFewLandmarks: need at least {needed} landmark pairs, got {got}")]
    TooFewLandmarks { needed: usize, got: usize },

    #[error("InvalidFeature: cell `{id}`: feature `{name}` = {value} is out of range")]
    InvalidFeature {
        id: String,
        name: String,
        value: f64,
    },

    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JsonError: {0}")]
    Json(#[from] serde_json::Error),

    #[error("ConfigError: {0}")]
    Config(String),

    #[error("TooFewPoints: need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("InvalidInput: {0}")]
    InvalidInput(String),

    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),

    #[error("NoDenseRegion: no cell reaches density gate {gate}")]
    NoDenseRegion { gate: f64 },

    #[error("MissingFeature: cell `{id}` has no feature `{name}`")]
    MissingFeature { id: String, name: String },

    #[error(
        "FeatureMismatch: source graph has {source_dim} features, target graph has {target_dim}"
    )]
    FeatureMismatch {
        source_dim: usize,
        target_dim: usize,
    },

    #[error("DegenerateAffinity: affinity matrix is identically zero")]
    DegenerateAffinity,

    #[error("UnknownId: no position for cell id `{0}`")]
    UnknownId(String),

    #[error("TooFewPairs: need at least {needed} correspondences, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("DegenerateConfiguration: {0}")]
    DegenerateConfiguration(String),

    #[error("TooFewCells: need at least {needed} cells per table, got {got}")]
    TooFewCells { needed: usize, got: usize },

    #[error("WindowsEmpty: none of the {windows} sampled windows produced a usable graph pair")]
    WindowsEmpty { windows: usize },

    #[error("UndefinedCorrelation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("MissingLabel: cell `{0}` has no class label")]
    MissingLabel(String),

    #[error("GridMismatch: {0}")]
    GridMismatch(String),
}

impl Error {
    /// Stable short name of the variant, used for exit diagnostics and the
    /// C status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularTransform { .. } => "SingularTransform",
            Error::InvalidPixelSize(_) => "InvalidPixelSize",
            Error::SchemaError { .. } => "SchemaError",
            Error::ParseError { .. } => "ParseError",
            Error::DuplicateId(_) => "DuplicateId",
            Error::TooFewLandmarks { .. } => "TooFewLandmarks",
            Error::InvalidFeature { .. } => "InvalidFeature",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
            Error::Config(_) => "ConfigError",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::InvalidInput(_) => "InvalidInput",
            Error::EmptyInput(_) => "EmptyInput",
            Error::NoDenseRegion { .. } => "NoDenseRegion",
            Error::MissingFeature { .. } => "MissingFeature",
            Error::FeatureMismatch { .. } => "FeatureMismatch",
            Error::DegenerateAffinity => "DegenerateAffinity",
            Error::UnknownId(_) => "UnknownId",
            Error::TooFewPairs { .. } => "TooFewPairs",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::TooFewCells { .. } => "TooFewCells",
            Error::WindowsEmpty { .. } => "WindowsEmpty",
            Error::UndefinedCorrelation(_) => "UndefinedCorrelation",
            Error::MissingLabel(_) => "MissingLabel",
            Error::GridMismatch(_) => "GridMismatch",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
