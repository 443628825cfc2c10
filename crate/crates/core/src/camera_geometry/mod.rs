//! Pinhole cameras, marker-cube calibration and triangulation.
//!
//! The capture world frame is the marker cube's corner frame. Every visible
//! cube marker yields a full camera pose hypothesis; [`ransac_pose_consensus`]
//! picks the hypothesis most markers agree with and refines it jointly over
//! the agreeing corners.
//!
//! Lens distortion is not modelled: detections must come from undistorted
//! images.

mod camera;
mod marker;
mod pose;
mod ransac;
mod triangulate;

pub use camera::{CameraModel, Intrinsics};
pub use marker::{
    estimate_marker_pose, estimate_marker_pose_unordered, project_marker, MarkerCubeSpec,
    MarkerDetection, MarkerPoseEstimate, MarkerSpec,
};
pub use pose::{rotation_angle, Pose6D};
pub use ransac::{corner_rms, ransac_pose_consensus, Consensus, MarkerHypothesis, RansacConfig};
pub use triangulate::{triangulate, Triangulation};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid marker cube: {0}")]
    InvalidCube(String),
    #[error("marker id {0} is not part of the cube")]
    UnknownMarker(u32),
    #[error("invalid marker detection: {0}")]
    InvalidDetection(String),
    #[error("unstable pose estimate: {0}")]
    UnstableEstimate(String),
    #[error("ambiguous marker pose: {candidates} corner orderings fit equally well")]
    Ambiguous { candidates: usize },
    #[error("no consensus: best hypothesis has {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },
    #[error("need at least {required} hypotheses, got {found}")]
    NoHypotheses { found: usize, required: usize },
    #[error("triangulation needs at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("{0} observations for {1} cameras")]
    ViewMismatch(usize, usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}
