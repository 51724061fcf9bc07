//! Autoregressive grasp-motion synthesis: attention features over encoded
//! joint positions, a flat per-frame input built from a six-frame history and
//! target guidance, a gated network predicting ten future pose changes, a
//! receding-horizon rollout, training, and trajectory metrics.

mod encoding;
mod io;
mod metrics;
mod net;
mod rollout;
mod state;
mod train;

use serde::{Deserialize, Serialize};

pub use encoding::{joint_feature, sinusoidal_encoding, JointFeature};
pub use io::{read_motion_csv, write_motion_csv};
pub use metrics::{motion_metrics, safety_check, MotionMetrics, SafetyReport};
pub use net::{predict_delta, MotionNet, PoseDelta};
pub use rollout::{rollout, Termination};
pub use state::{assemble_input, pad_history, InputLayout, InputParts, MotionState};
pub use train::{evaluate_motion_loss, train_motion, MotionCurve, MotionLoss};

use crate::kinematics::{HandPose, KinematicsError};

/// Frames of pose history in the network input: five previous plus current.
pub const HISTORY: usize = 6;
/// Future steps predicted per call.
pub const HORIZON: usize = 10;
/// 15 Hz capture.
pub const FRAME_PERIOD_S: f64 = 1.0 / 15.0;
/// Shortest sequence accepted for training.
pub const MIN_TRAIN_FRAMES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum MotionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence {index} has {have} frames, need at least {need}")]
    TooShort { index: usize, have: usize, need: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid sequence: {0}")]
    Sequence(String),
    #[error("rollout diverged at step {step}: pose norm {norm:.3} exceeds bound {bound:.3}")]
    Diverged { step: usize, norm: f64, bound: f64 },
    #[error("sequence lengths differ: predicted {pred}, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("motion csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
    #[error(transparent)]
    Grasp(#[from] crate::graspgen::GraspError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MotionError>;

/// Ordered poses sampled at a fixed period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub poses: Vec<HandPose>,
    pub frame_period_s: f64,
}

impl MotionSequence {
    pub fn new(poses: Vec<HandPose>, frame_period_s: f64) -> Result<Self> {
        let s = Self { poses, frame_period_s };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(MotionError::Sequence("sequence has no frames".into()));
        }
        if !(self.frame_period_s > 0.0 && self.frame_period_s.is_finite()) {
            return Err(MotionError::Sequence("frame period must be positive".into()));
        }
        if let Some(i) = self.poses.iter().position(|p| p.to_array().iter().any(|v| !v.is_finite())) {
            return Err(MotionError::Sequence(format!("frame {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> &HandPose {
        self.poses.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionLossWeights {
    pub pose: f64,
    pub points: f64,
    pub displacement: f64,
}

impl Default for MotionLossWeights {
    fn default() -> Self {
        Self { pose: 1.0, points: 1.0, displacement: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Hand surface samples `M` per frame.
    pub hand_points: usize,
    /// Sinusoid frequencies per coordinate; the encoding width is `6 ×` this.
    pub pe_frequencies: usize,
    /// Attention head width `d` of the joint feature.
    pub joint_dim: usize,
    /// Point encoder producing the target hand feature.
    pub target_widths: Vec<usize>,
    /// Multiplies point and displacement segments (1/m) before the network.
    pub point_scale: f64,
    /// Multiplies the velocity segment (s/m) before the network.
    pub velocity_scale: f64,
    /// Width of the dense layer ahead of the gated experts.
    pub trunk_width: usize,
    pub gate_hidden: Vec<usize>,
    pub experts: usize,
    /// Hidden widths of every expert; the last layer outputs `10 × 28`.
    pub expert_widths: Vec<usize>,
    /// Network outputs are multiplied by this to give pose changes.
    pub output_scale: f64,
    pub weights: MotionLossWeights,
    /// Gaussian noise on input θ during training.
    pub noise_theta_rad: f64,
    /// Gaussian noise on input hand points during training.
    pub noise_points_m: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub frame_period_s: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            hand_points: 512,
            pe_frequencies: 4,
            joint_dim: 16,
            target_widths: vec![64, 64],
            point_scale: 10.0,
            velocity_scale: 1.0,
            trunk_width: 256,
            gate_hidden: vec![32],
            experts: 4,
            expert_widths: vec![256],
            output_scale: 0.1,
            weights: MotionLossWeights::default(),
            noise_theta_rad: 0.01,
            noise_points_m: 0.002,
            learning_rate: 1e-3,
            iterations: 2000,
            batch_size: 8,
            seed: 0,
            frame_period_s: FRAME_PERIOD_S,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MotionError::Config(m.into()));
        if self.hand_points < crate::graspgen::MIN_POINTS {
            return bad("hand_points must be at least 32");
        }
        if self.pe_frequencies == 0 || self.joint_dim == 0 || self.trunk_width == 0 || self.experts == 0 || self.batch_size == 0 {
            return bad("pe_frequencies, joint_dim, trunk_width, experts and batch_size must be positive");
        }
        if self.target_widths.is_empty() || self.target_widths.iter().chain(&self.gate_hidden).chain(&self.expert_widths).any(|&w| w == 0) {
            return bad("layer widths must be positive and the target encoder needs a layer");
        }
        let w = &self.weights;
        if [w.pose, w.points, w.displacement, self.noise_theta_rad, self.noise_points_m].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("loss weights and noise levels must be finite and non-negative");
        }
        if [self.point_scale, self.velocity_scale, self.output_scale, self.learning_rate, self.frame_period_s].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("scales, learning_rate and frame_period_s must be positive");
        }
        Ok(())
    }
}
