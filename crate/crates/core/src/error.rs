use std::path::PathBuf;

use thiserror::Error;

use crate::landmarks::{LandmarkId, ViewLabel};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("landmark {id} in frame {frame} is marked present at the (0,0) absent sentinel")]
    ZeroSentinelConflict { frame: usize, id: LandmarkId },

    #[error("image error: {0}")]
    Image(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("landmark {0} does not appear in any validation sample")]
    EmptyLandmarkCohort(LandmarkId),

    #[error("non-finite loss at iteration {iteration}: {diagnostic}")]
    NonFiniteLoss { iteration: u64, diagnostic: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("presence mismatch for landmark {id} in frame {frame}")]
    PresenceMismatch { frame: usize, id: LandmarkId },

    #[error("sequence has no apex point")]
    MissingApex,

    #[error("landmark {id} missing in frame {frame}")]
    MissingLandmark { frame: usize, id: LandmarkId },

    #[error("operation requires view {expected}, sequence is {found}")]
    WrongView {
        expected: ViewLabel,
        found: ViewLabel,
    },

    #[error("missing frame index: {0}")]
    MissingFrameIndex(&'static str),

    #[error("landmark {id} at ({x:.2}, {y:.2}) is too close to the image border for tracking")]
    InitOutOfBounds { id: LandmarkId, x: f64, y: f64 },

    #[error("phantom geometry error: {0}")]
    Geometry(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
