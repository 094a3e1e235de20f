use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NIfTI data: {0}")]
    Format(String),
    #[error("label data must be non-negative integers: {0}")]
    LabelType(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimsMismatch { expected: [usize; 3], actual: [usize; 3] },
    #[error("volume has no foreground voxels")]
    EmptyForeground,
    #[error("trilinear interpolation is not allowed on label volumes")]
    InterpolationMode,
    #[error("mask is empty: {0}")]
    EmptyMask(&'static str),
    #[error("label code {0} is not mapped by the class map")]
    UnmappedCode(u16),
    #[error("required role `{0}` is absent from the volume")]
    MissingRole(String),
    #[error("hemisphere clustering is degenerate: {0}")]
    DegenerateClustering(String),
    #[error("invalid pathology plan: {0}")]
    InvalidPlan(String),
    #[error("severity {0} outside [0, 1]")]
    Severity(f64),
    #[error("synthesis constraint violated: {0}")]
    Constraint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("denoiser failure: {0}")]
    Denoiser(String),
    #[error("non-finite value during sampling at timestep {0}")]
    NonFinite(usize),
    #[error("plugin protocol error: {0}")]
    Protocol(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
