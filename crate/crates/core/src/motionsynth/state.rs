use super::{MotionError, MotionNet, Result, HISTORY};
use crate::kinematics::{forward_kinematics, HandPose, HandSurfaceSampler, KinematicModel, NUM_JOINTS, POSE_DIM};
use crate::math::Vec3;
use crate::neural::{Graph, Tensor, Var};

/// Network input for frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    /// `φ_{t−5..t}`, oldest first.
    pub poses: Vec<HandPose>,
    /// Joint positions of each history pose.
    pub joint_positions: Vec<[Vec3; NUM_JOINTS]>,
    /// `Pʰ_t`.
    pub points: Vec<Vec3>,
    /// `(Pʰ_t − Pʰ_{t−1}) / Δt` in m/s.
    pub velocities: Vec<Vec3>,
    /// Hand points of the target pose.
    pub target_points: Vec<Vec3>,
    /// `target_points − points`.
    pub displacement: Vec<Vec3>,
}

/// Repeats the first entry until there are exactly `HISTORY` poses. Longer
/// inputs keep their last `HISTORY` entries.
pub fn pad_history(poses: &[HandPose]) -> Result<Vec<HandPose>> {
    let first = poses.first().ok_or_else(|| MotionError::Shape("history is empty".into()))?;
    let mut out = vec![*first; HISTORY.saturating_sub(poses.len())];
    out.extend_from_slice(&poses[poses.len().saturating_sub(HISTORY)..]);
    Ok(out)
}

impl MotionState {
    /// From explicit current and previous hand points.
    pub fn from_parts(
        model: &KinematicModel,
        poses: Vec<HandPose>,
        points: Vec<Vec3>,
        previous_points: &[Vec3],
        target_points: Vec<Vec3>,
        frame_period_s: f64,
    ) -> Result<Self> {
        if poses.len() != HISTORY {
            return Err(MotionError::Shape(format!("history has {} frames, expected {HISTORY}", poses.len())));
        }
        if previous_points.len() != points.len() || target_points.len() != points.len() {
            return Err(MotionError::Shape(format!(
                "{} current, {} previous and {} target points",
                points.len(),
                previous_points.len(),
                target_points.len()
            )));
        }
        let joint_positions = poses.iter().map(|p| forward_kinematics(model, p).joint_positions()).collect();
        let velocities = points.iter().zip(previous_points).map(|(a, b)| (a - b) / frame_period_s).collect();
        let displacement = target_points.iter().zip(&points).map(|(t, p)| t - p).collect();
        Ok(Self { poses, joint_positions, points, velocities, target_points, displacement })
    }

    /// Hand points from forward kinematics of the last two history poses.
    pub fn from_history(
        model: &KinematicModel,
        sampler: &HandSurfaceSampler,
        history: &[HandPose],
        target_points: Vec<Vec3>,
        frame_period_s: f64,
    ) -> Result<Self> {
        if history.len() != HISTORY {
            return Err(MotionError::Shape(format!("history has {} frames, expected {HISTORY}", history.len())));
        }
        let points = sampler.points(&forward_kinematics(model, &history[HISTORY - 1]));
        let previous = sampler.points(&forward_kinematics(model, &history[HISTORY - 2]));
        Self::from_parts(model, history.to_vec(), points, &previous, target_points, frame_period_s)
    }
}

/// Offsets of the flat input vector. Segments, in order:
///
/// | segment             | length        |
/// |---------------------|---------------|
/// | joint features      | `6 · 22 · d`  |
/// | pose history        | `6 · 28`      |
/// | hand points         | `3M`          |
/// | hand point velocity | `3M`          |
/// | target hand feature | `F`           |
/// | displacement        | `3M`          |
///
/// Per-frame blocks are oldest first; joint features are row-major per
/// frame; point segments are `x, y, z` per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub joint_dim: usize,
    pub hand_points: usize,
    pub target_dim: usize,
}

impl InputLayout {
    /// `(offset, length)` of each segment in table order.
    pub fn segments(&self) -> [(usize, usize); 6] {
        let lens = [HISTORY * NUM_JOINTS * self.joint_dim, HISTORY * POSE_DIM, 3 * self.hand_points, 3 * self.hand_points, self.target_dim, 3 * self.hand_points];
        let mut out = [(0, 0); 6];
        let mut off = 0;
        for (o, l) in out.iter_mut().zip(lens) {
            *o = (off, l);
            off += l;
        }
        out
    }

    pub fn len(&self) -> usize {
        let (o, l) = self.segments()[5];
        o + l
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decode(&self, input: &[f64]) -> Result<InputParts> {
        if input.len() != self.len() {
            return Err(MotionError::Shape(format!("input has {} values, layout expects {}", input.len(), self.len())));
        }
        let seg = |i: usize| {
            let (o, l) = self.segments()[i];
            &input[o..o + l]
        };
        let pts = |s: &[f64]| s.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
        let jd = NUM_JOINTS * self.joint_dim;
        Ok(InputParts {
            joint_features: seg(0).chunks_exact(jd).map(|c| Tensor::new(NUM_JOINTS, self.joint_dim, c.to_vec()).expect("sized")).collect(),
            poses: seg(1).chunks_exact(POSE_DIM).map(|c| HandPose::from_slice(c).expect("sized")).collect(),
            points: pts(seg(2)),
            velocities: pts(seg(3)),
            target_feature: seg(4).to_vec(),
            displacement: pts(seg(5)),
        })
    }
}

/// Components of a flat input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InputParts {
    pub joint_features: Vec<Tensor>,
    pub poses: Vec<HandPose>,
    pub points: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub target_feature: Vec<f64>,
    pub displacement: Vec<Vec3>,
}

impl InputParts {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for f in &self.joint_features {
            out.extend_from_slice(f.data());
        }
        for p in &self.poses {
            out.extend_from_slice(&p.to_array());
        }
        let push = |out: &mut Vec<f64>, v: &[Vec3]| out.extend(v.iter().flat_map(|p| [p.x, p.y, p.z]));
        push(&mut out, &self.points);
        push(&mut out, &self.velocities);
        out.extend_from_slice(&self.target_feature);
        push(&mut out, &self.displacement);
        out
    }
}

fn points_row(v: &[Vec3]) -> Tensor {
    Tensor::row(&v.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())
}

impl MotionNet {
    /// `1 × L` input on the graph, in [`InputLayout`] order.
    pub(crate) fn assemble_graph(&self, g: &mut Graph, state: &MotionState) -> Result<Var> {
        let m = self.config.hand_points;
        if state.poses.len() != HISTORY || state.joint_positions.len() != HISTORY {
            return Err(MotionError::Shape(format!("history has {} frames, expected {HISTORY}", state.poses.len())));
        }
        if [state.points.len(), state.velocities.len(), state.target_points.len(), state.displacement.len()].iter().any(|&n| n != m) {
            return Err(MotionError::Shape(format!("state point sets must have {m} points")));
        }
        let mut parts = Vec::with_capacity(HISTORY + 5);
        for jp in &state.joint_positions {
            let f = self.joint_feature_graph(g, jp)?;
            parts.push(g.reshape(f, 1, NUM_JOINTS * self.config.joint_dim)?);
        }
        parts.push(g.input(Tensor::row(&state.poses.iter().flat_map(|p| p.to_array()).collect::<Vec<_>>())));
        parts.push(g.input(points_row(&state.points)));
        parts.push(g.input(points_row(&state.velocities)));
        let (_, tf) = self.target_encoder.forward(g, &self.store, &state.target_points)?;
        parts.push(tf);
        parts.push(g.input(points_row(&state.displacement)));
        Ok(g.concat_cols(&parts)?)
    }
}

/// Flat network input `𝓜_in` for `state`; see [`InputLayout`].
pub fn assemble_input(net: &MotionNet, state: &MotionState) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let v = net.assemble_graph(&mut g, state)?;
    Ok(g.value(v).data().to_vec())
}
