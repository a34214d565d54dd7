use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("sketch encloses no particle")]
    EmptySketch,

    #[error("expected a {expected}-frame polygon, got {got}")]
    WrongFrame { expected: &'static str, got: &'static str },

    #[error("ray through pixel ({u}, {v}) does not reach the ground plane")]
    RayParallelToGround { u: f64, v: f64 },

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("moments infeasible for a Beta distribution (mean {mean}, variance {variance})")]
    InfeasibleMoments { mean: f64, variance: f64 },

    #[error("fused likelihood is zero on the support of the prediction")]
    DegenerateLikelihood,

    #[error("no sources to weight")]
    NoSources,

    #[error("duplicate source {0} in one observation bundle")]
    DuplicateSource(String),

    #[error("unknown source {0}")]
    UnknownSource(String),

    #[error("observation at t={got} does not match step t={expected}")]
    TimeMismatch { expected: u64, got: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
