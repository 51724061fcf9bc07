//! Articulated hand model: loading, forward kinematics, posed meshes and
//! surface samples, and pose gradients through the kinematic tree.
//!
//! A pose is `φ = (θ, η)`: 22 joint angles followed by the root translation
//! (meters) and root axis-angle rotation (radians).

mod fk;
mod model;
mod pose;
mod surface;

pub use fk::{forward_kinematics, FkResult};
pub use model::{load_model, load_model_file, toy_hand, Joint, JointKind, KinematicModel, Link, TOY_HAND_TOML};
pub use pose::{read_poses, write_poses, HandPose};
pub use surface::{hand_mesh, hand_mesh_and_points, pose_gradient, posed_link_meshes, HandSurfaceSampler, PoseGradient, SurfacePointSet};

use crate::geometry::GeometryError;

/// Actuated joint count of every supported hand.
pub const NUM_JOINTS: usize = 22;
/// Length of the flattened pose vector `φ`.
pub const POSE_DIM: usize = NUM_JOINTS + 6;

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("model parse failure: {0}")]
    Parse(String),
    #[error("duplicate link `{0}`")]
    DuplicateLink(String),
    #[error("duplicate joint `{0}`")]
    DuplicateJoint(String),
    #[error("non-unit axis on joint `{joint}` (norm {norm})")]
    NonUnitAxis { joint: String, norm: f64 },
    #[error("expected {NUM_JOINTS} actuated joints, found {0}")]
    JointCount(usize),
    #[error("joint `{joint}` references unknown link `{link}`")]
    UnknownLink { joint: String, link: String },
    #[error("cycle in link graph at `{0}`")]
    Cycle(String),
    #[error("link graph must have exactly one root, found {0}")]
    Roots(usize),
    #[error("joint `{0}` has lower limit not below upper limit")]
    InvalidLimits(String),
    #[error("mesh for link `{link}`: {source}")]
    Mesh { link: String, source: GeometryError },
    #[error("missing link mesh: model has no link geometry")]
    MissingMesh,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KinematicsError>;

/// Clamps each joint angle into its limits; values already inside are returned unchanged.
pub fn clamp_to_limits(model: &KinematicModel, theta: &[f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
    let mut out = *theta;
    for (j, v) in out.iter_mut().enumerate() {
        let (lo, hi) = model.limits(j);
        *v = v.clamp(lo, hi);
    }
    out
}
