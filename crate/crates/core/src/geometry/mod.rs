//! Point-cloud and mesh computations: denoising, multi-view fusion, signed
//! distance, contact maps, intersection and penetration metrics, Chamfer distance.

mod cloud;
mod distance;
pub(crate) mod mesh;
mod metrics;
pub mod ply;
mod spatial;

pub use cloud::{denoise_statistical, merge_views, PointCloud};
pub use distance::{closest_point_on_triangle, signed_distance, MeshQuery};
pub use mesh::{SurfaceSample, TriangleMesh};
pub use metrics::{
    chamfer_distance, contact_map, hand_object_intersection_volume, penetration_distance,
    self_intersection_volume, ContactMap, PosedLink,
};
pub use spatial::PointGrid;

use thiserror::Error;

/// Hand-to-object distance below which an object point counts as touched (m).
pub const DEFAULT_CONTACT_THRESHOLD_M: f64 = 0.005;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("insufficient points: {have} points, need more than {need}")]
    InsufficientPoints { have: usize, need: usize },
    #[error("length mismatch: {0} clouds but {1} extrinsics")]
    LengthMismatch(usize, usize),
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ply: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
