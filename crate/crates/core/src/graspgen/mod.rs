//! Contact-aware conditional VAE for grasp poses: point-set encoders, a
//! Gaussian latent, a four-term training loss, candidate sampling, test-time
//! contact refinement and a stability filter.

mod cvae;
mod encoder;
mod filter;
mod losses;
mod ops;
mod refine;
mod train;

use serde::{Deserialize, Serialize};

pub use cvae::{cvae_decode, cvae_encode, encode_object, Decoded, LatentDistribution, ObjectEncoding, PoseGenModel};
pub use encoder::{farthest_point_indices, point_set_encode, PointEncoder, MIN_POINTS};
pub use filter::{contact_summary, filter_unstable, ContactSummary, StabilityFilter};
pub use losses::{kl_divergence, pose_losses, LossWeights, PoseLosses};
pub use ops::{chamfer_op, gather_rows, hand_points_op};
pub use refine::{refine_to_contact, refinement_objective, RefineParams, RefineReport};
pub use train::{sample_candidates, train_posegen, EpochLosses, GraspSample};

use crate::geometry::{ContactMap, GeometryError, DEFAULT_CONTACT_THRESHOLD_M};
use crate::kinematics::{HandPose, KinematicsError};
use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum GraspError {
    #[error("point set has {have} points, need at least {need}")]
    TooFewPoints { have: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraspError>;

/// Where a candidate's contact map comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSource {
    /// Thresholded distance from the decoded (clamped) hand surface.
    #[default]
    Recomputed,
    /// The decoder's per-point contact head, `logit > 0`.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGenConfig {
    pub latent_dim: usize,
    /// Object clouds are resampled to this many points before encoding.
    pub point_count: usize,
    /// Surface samples on the hand for the hand encoder and Chamfer term.
    pub hand_points: usize,
    pub encoder_widths: Vec<usize>,
    /// Point coordinates are scaled by this (1/m) before encoding.
    pub input_scale: f64,
    pub decoder_widths: Vec<usize>,
    pub contact_widths: Vec<usize>,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub contact_threshold_m: f64,
    pub contact_source: ContactSource,
}

impl Default for PoseGenConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            point_count: 1024,
            hand_points: 1024,
            encoder_widths: vec![256, 256, 256],
            input_scale: 10.0,
            decoder_widths: vec![256, 256, 256],
            contact_widths: vec![128],
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 8,
            seed: 0,
            contact_threshold_m: DEFAULT_CONTACT_THRESHOLD_M,
            contact_source: ContactSource::Recomputed,
        }
    }
}

impl PoseGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GraspError::Config(m.into()));
        if self.latent_dim == 0 || self.hand_points == 0 || self.batch_size == 0 {
            return bad("latent_dim, hand_points and batch_size must be positive");
        }
        if self.point_count < MIN_POINTS {
            return bad("point_count must be at least 32");
        }
        if self.encoder_widths.is_empty() || self.decoder_widths.is_empty() {
            return bad("encoder and decoder need at least one layer");
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).chain(&self.contact_widths).any(|&w| w == 0) {
            return bad("layer widths must be positive");
        }
        let w = &self.weights;
        if [w.kl, w.recon, w.cmap, w.cd].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0) || !(self.contact_threshold_m > 0.0) || !(self.input_scale > 0.0) {
            return bad("learning_rate, input_scale and contact_threshold_m must be positive");
        }
        Ok(())
    }
}

/// Quality metrics filled in by the evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspMetrics {
    pub penetration_cm: f64,
    pub self_intersection_cm3: f64,
    pub sim_displacement_cm: f64,
    pub contact_count: usize,
    pub contact_links: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub id: usize,
    pub pose: HandPose,
    /// Flags over the object cloud the candidate was generated for.
    pub contact: ContactMap,
    pub metrics: Option<GraspMetrics>,
    pub score: Option<f64>,
}
