use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("total mass {mass:e} is at or below the floor {floor:e}")]
    ZeroMass { mass: f64, floor: f64 },

    #[error("grid mismatch: {lhs:?} vs {rhs:?}")]
    GridMismatch { lhs: (usize, usize), rhs: (usize, usize) },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("t = {t} lies outside [{t0}, {t1}]")]
    OutOfInterval { t: f64, t0: f64, t1: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dataset configuration out of bounds: {0}")]
    ConfigOutOfBounds(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad magic in {}: expected {expected:?}", path.display())]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("times are not strictly increasing at index {0}")]
    NonIncreasingTimes(usize),

    #[error("frame dimensions {found:?} differ from {expected:?}")]
    DimsMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("unknown parameter {0}")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, machine-parsable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroMass { .. } => "ZeroMass",
            Error::GridMismatch { .. } => "GridMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonScalarRoot(_) => "NonScalarRoot",
            Error::OutOfInterval { .. } => "OutOfInterval",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::ConfigOutOfBounds(_) => "ConfigOutOfBounds",
            Error::InvalidConfig(_) => "ConfigError",
            Error::MissingFile(_) => "MissingFile",
            Error::BadMagic { .. } => "BadMagic",
            Error::Malformed { .. } => "Malformed",
            Error::NonIncreasingTimes(_) => "NonIncreasingTimes",
            Error::DimsMismatch { .. } => "DimsMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::MissingCheckpoint(_) => "MissingCheckpoint",
            Error::UnknownParameter(_) => "UnknownParameter",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
