use std::f64::consts::PI;

use super::{MotionError, MotionNet, Result};
use crate::kinematics::NUM_JOINTS;
use crate::math::Vec3;
use crate::neural::{Graph, Tensor, Var};

/// `n × 6F` encoding of `n` positions. Row layout per position: for each axis
/// `a ∈ {x, y, z}` then each frequency `k < F`, the pair
/// `(sin ω_k c_a, cos ω_k c_a)` with `ω_k = π 2^k` rad/m.
pub fn sinusoidal_encoding(positions: &[Vec3], frequencies: usize) -> Tensor {
    let width = 6 * frequencies;
    let mut data = Vec::with_capacity(positions.len() * width);
    for p in positions {
        for a in 0..3 {
            for k in 0..frequencies {
                let w = PI * f64::from(1u32 << k.min(31));
                data.push((w * p[a]).sin());
                data.push((w * p[a]).cos());
            }
        }
    }
    Tensor::new(positions.len(), width, data).expect("sized buffer")
}

/// Encoded joints and their self-attention features for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFeature {
    /// `22 × 6F`.
    pub encoding: Tensor,
    /// `22 × d`.
    pub feature: Tensor,
}

impl MotionNet {
    /// `22 × d` joint feature on the graph.
    pub(crate) fn joint_feature_graph(&self, g: &mut Graph, positions: &[Vec3]) -> Result<Var> {
        if positions.len() != NUM_JOINTS {
            return Err(MotionError::Shape(format!("expected {NUM_JOINTS} joint positions, got {}", positions.len())));
        }
        let pe = g.input(sinusoidal_encoding(positions, self.config.pe_frequencies));
        Ok(self.joint_attention.forward(g, &self.store, pe)?)
    }
}

pub fn joint_feature(joint_positions: &[Vec3], net: &MotionNet) -> Result<JointFeature> {
    let mut g = Graph::new();
    let f = net.joint_feature_graph(&mut g, joint_positions)?;
    Ok(JointFeature { encoding: sinusoidal_encoding(joint_positions, net.config.pe_frequencies), feature: g.value(f).clone() })
}
