use serde::{Deserialize, Serialize};

use super::{assemble_input, pad_history, predict_delta, MotionError, MotionNet, MotionSequence, MotionState, Result, HISTORY};
use crate::kinematics::{clamp_to_limits, forward_kinematics, HandPose, KinematicModel};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Termination {
    pub max_steps: usize,
    /// Stop once the mean distance between corresponding hand points of the
    /// current and target poses falls below this.
    pub distance_threshold_m: f64,
    /// Abort when `‖φ‖₂` exceeds this multiple of `max(‖φ_start‖, ‖φ_target‖, 1)`.
    pub divergence_factor: f64,
}

impl Default for Termination {
    fn default() -> Self {
        Self { max_steps: 60, distance_threshold_m: 0.005, divergence_factor: 4.0 }
    }
}

fn norm(p: &HandPose) -> f64 {
    p.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len().max(1) as f64
}

/// Receding-horizon synthesis from `start` towards `target`: each iteration
/// predicts ten steps, applies only the first, clamps θ to the joint limits
/// and rebuilds the state. The result holds `start` plus one pose per step;
/// the gate's progress input is `step / max_steps`.
pub fn rollout(net: &MotionNet, model: &KinematicModel, start: &HandPose, target: &HandPose, termination: &Termination) -> Result<MotionSequence> {
    let period = net.config.frame_period_s;
    let sampler = net.sampler();
    let target_points = sampler.points(&forward_kinematics(model, target));
    let bound = termination.divergence_factor * norm(start).max(norm(target)).max(1.0);
    let mut first = *start;
    first.theta = clamp_to_limits(model, &start.theta);
    let mut poses = vec![first];
    let mut points = sampler.points(&forward_kinematics(model, &first));
    let mut previous = points.clone();
    for step in 0..termination.max_steps {
        if mean_distance(&points, &target_points) < termination.distance_threshold_m {
            break;
        }
        let history = pad_history(&poses[poses.len().saturating_sub(HISTORY)..])?;
        let state = MotionState::from_parts(model, history, points.clone(), &previous, target_points.clone(), period)?;
        let input = assemble_input(net, &state)?;
        let progress = step as f64 / termination.max_steps as f64;
        let delta = predict_delta(net, &input, progress)?;
        let mut next = delta.apply(poses.last().expect("non-empty"), 1);
        next.theta = clamp_to_limits(model, &next.theta);
        let n = norm(&next);
        if !n.is_finite() || n > bound {
            return Err(MotionError::Diverged { step: step + 1, norm: n, bound });
        }
        previous = std::mem::replace(&mut points, sampler.points(&forward_kinematics(model, &next)));
        poses.push(next);
    }
    MotionSequence::new(poses, period)
}
