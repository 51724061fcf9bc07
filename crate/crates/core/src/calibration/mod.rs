//! Sensor-rig calibration and object pose labeling: point-to-point ICP,
//! neighbor-chained extrinsic refinement, AX = XB hand-eye calibration,
//! robot/camera time-offset recovery, and frame-to-frame object tracking.

mod extrinsics;
mod handeye;
mod icp;
mod io;
mod sync;
mod track;

pub use extrinsics::{refine_extrinsics, REFINE_STAGES};
pub use handeye::{hand_eye_residual, hand_eye_solve};
pub use icp::{icp_rigid, kabsch, IcpParams, IcpResult};
pub use io::{read_motion_pairs, write_motion_pairs, CalibrationFile, CameraRecord};
pub use sync::{sync_offset, validate_stagger, SyncResult, TimedStream, SYNC_WARNING_RMS};
pub use track::{object_samples, track_object_pose, TrackedFrame, TRACK_REVIEW_RMS};

use crate::geometry::PointCloud;
use crate::math::RigidTransform;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("camera {0} is not connected to the reference camera")]
    Disconnected(usize),
    #[error("no robot frame within {window} s of t = {center} s")]
    EmptyWindow { center: f64, window: f64 },
    #[error("frame {index}: {source}")]
    Frame { index: usize, source: Box<CalibrationError> },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CalibrationError>;

/// Refines a hand-eye estimate by aligning robot mesh points (robot frame) to
/// the main camera's cloud, starting from `hand_eye`.
pub fn refine_hand_eye_icp(robot_points: &PointCloud, camera_cloud: &PointCloud, hand_eye: &RigidTransform, params: &IcpParams) -> Result<RigidTransform> {
    Ok(icp_rigid(robot_points, camera_cloud, hand_eye, params)?.transform)
}
