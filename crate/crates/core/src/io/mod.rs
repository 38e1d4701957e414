//! File formats and ingestion utilities: MOT16 rows, COLMAP text models,
//! detection post-processing (NMS, tile merging) and frame resampling.

pub mod colmap;
pub mod detections;
pub mod mot16;
pub mod scene;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: non-positive box dimensions")]
    NegativeDimensions { path: String, line: usize },
    #[error("unknown camera model '{0}'")]
    UnknownCameraModel(String),
    #[error("image '{0}': rotation quaternion is off unit norm by more than 1e-3")]
    UnnormalizedRotation(String),
    #[error("image {image_id} references missing camera {camera_id}")]
    MissingIntrinsics { image_id: u64, camera_id: u64 },
    #[error("cannot extract a frame index from image name '{0}'")]
    BadImageName(String),
    #[error("images '{0}' and '{1}' map to the same frame index")]
    DuplicateFrame(String, String),
    #[error("stride must be >= 1")]
    InvalidStride,
    #[error("tile offset ({x}, {y}) lies outside the frame")]
    OffsetOutOfFrame { x: f64, y: f64 },
    #[error("row {0}: ids in tracking files must be >= 1")]
    InvalidTrackId(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
