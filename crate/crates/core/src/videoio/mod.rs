//! Clip storage, keypoints, robust frame alignment, stabilization and
//! dataset ingestion.

pub mod container;
pub mod image;
pub mod ingest;
pub mod matching;
pub mod segment;
pub mod sift;
pub mod stabilize;
pub mod transform;

use thiserror::Error;

pub use container::{normalize_u8, read_clip, read_stored, write_clip, write_stored, ClipData, ClipError, StoredClip};
pub use image::Image;
pub use ingest::{ingest, read_manifest, IngestConfig, IngestReport, ManifestEntry};
pub use matching::{match_descriptors, match_keypoints};
pub use segment::{segment_and_normalize, to_clip};
pub use sift::{detect_keypoints, Keypoint, SiftConfig};
pub use stabilize::{estimate_adjacent, stabilize, StabilizeConfig, Stabilized};
pub use transform::{estimate_transform_ransac, fit_similarity, PointPair, RansacConfig, RansacResult, SimilarityTransform};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("frame {width}x{height} is smaller than {min}x{min}")]
    FrameTooSmall { width: usize, height: usize, min: usize },
    #[error("need at least 2 matches, got {0}")]
    TooFewMatches(usize),
    #[error("transform estimation failed: {inliers} inliers")]
    EstimationFailed { inliers: usize },
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
