use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the stage that raises them; [`Error::kind`] gives a
/// coarse classification used for exit codes and machine-readable logs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate neighbourhood around point {index}: all neighbours coincide")]
    DegenerateNeighborhood { index: usize },

    #[error("{path}: I/O error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("threshold {threshold} is outside the volume value range [{min}, {max}]")]
    ThresholdOutOfRange { threshold: f64, min: f64, max: f64 },

    #[error("level set is empty")]
    EmptyLevelSet,

    #[error(
        "surface reaches y = {max_y:.3} mm, which is not below the projection plane at d = {plane_offset:.3} mm; use a larger plane offset"
    )]
    SurfaceIntersectsPlane { max_y: f64, plane_offset: f64 },

    #[error("pixel ({col}, {row}) is outside the {width}x{height} raster")]
    PixelOutOfBounds {
        col: f64,
        row: f64,
        width: usize,
        height: usize,
    },

    #[error("no face detected")]
    NoFaceDetected,

    #[error("landmarks not detected: {missing:?}")]
    LandmarksNotDetected { missing: Vec<u32> },

    #[error("detector bridge failure: {0}")]
    Bridge(String),

    #[error("detector protocol violation: {0}")]
    Protocol(String),

    #[error("inconsistent observation: L = 0 but x1 = {x1}, x2 = {x2}")]
    InconsistentObservation { x1: f64, x2: f64 },

    #[error("arcsine argument out of domain: x1 = {x1}, L = {radius}")]
    ArcsineDomain { x1: f64, radius: f64 },

    #[error(
        "landmark lies behind the rotation axis in the first view (L cos(theta1) = {depth:.6} mm); lifting only covers the front hemisphere"
    )]
    OutOfHemisphere { depth: f64 },

    #[error("invalid angle pair: {0}")]
    InvalidAngles(String),

    #[error("landmark index sets differ; missing: {missing:?}")]
    IndexMismatch { missing: Vec<u32> },

    #[error("need at least 3 landmarks, found {found}")]
    InsufficientLandmarks { found: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("sub-surface selection is empty")]
    EmptySubsurface,

    #[error("no correspondences within the maximum correspondence distance")]
    NoCorrespondences,

    #[error("point set has no normals")]
    MissingNormals,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Detection,
    Geometry,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | InvalidAngles(_) => ErrorKind::Config,
            Io { .. } | Parse { .. } | Json(_) => ErrorKind::Io,
            NoFaceDetected | LandmarksNotDetected { .. } | Bridge(_) | Protocol(_) | PixelOutOfBounds { .. } => {
                ErrorKind::Detection
            }
            InvalidInput(_) => ErrorKind::Config,
            _ => ErrorKind::Geometry,
        }
    }
}
