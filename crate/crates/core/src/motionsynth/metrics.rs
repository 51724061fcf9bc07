use serde::{Deserialize, Serialize};

use super::{MotionError, MotionSequence, Result};
use crate::geometry::{MeshQuery, TriangleMesh};
use crate::kinematics::{forward_kinematics, hand_mesh, HandPose, KinematicModel, NUM_JOINTS};
use crate::math::{RigidTransform, Vec3};
use crate::sim::{simulation_displacement, Displacement, SimParams};

/// Trajectory accuracy against a ground-truth sequence of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMetrics {
    /// Mean joint position error over frames and joints (cm).
    pub mpjpe_cm: f64,
    /// Temporal variance of the joint position error, averaged over joints
    /// and axes (cm²).
    pub ave_cm2: f64,
    /// `ave_cm2` split by axis before averaging.
    pub ave_axes_cm2: [f64; 3],
    /// Mean hand-mesh vertex offset at the final frame (cm).
    pub verts_offset_cm: f64,
    /// Clearance between the final predicted hand mesh and the object (cm);
    /// zero when any vertex is inside.
    pub min_dist_cm: f64,
    /// The same clearance for the ground-truth final frame.
    pub gt_min_dist_cm: f64,
    /// `min_dist_cm − gt_min_dist_cm`.
    pub min_dist_diff_cm: f64,
}

fn clearance(q: &MeshQuery, vertices: &[Vec3]) -> f64 {
    vertices
        .iter()
        .map(|v| match q.signed_distance(v) {
            Ok(d) => d.max(0.0),
            Err(_) => q.closest(v).map_or(f64::INFINITY, |(_, d)| d),
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn motion_metrics(pred: &MotionSequence, gt: &MotionSequence, model: &KinematicModel, object_mesh: &TriangleMesh) -> Result<MotionMetrics> {
    pred.validate()?;
    gt.validate()?;
    if pred.len() != gt.len() {
        return Err(MotionError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    let joints = |s: &MotionSequence| s.poses.iter().map(|p| forward_kinematics(model, p).joint_positions()).collect::<Vec<_>>();
    let (jp, jg) = (joints(pred), joints(gt));
    let frames = pred.len() as f64;
    let mut err_sum = 0.0;
    // Per joint and axis: sums of e and e² over frames, in cm.
    let mut s1 = vec![[0.0f64; 3]; NUM_JOINTS];
    let mut s2 = vec![[0.0f64; 3]; NUM_JOINTS];
    for (a, b) in jp.iter().zip(&jg) {
        for j in 0..NUM_JOINTS {
            let e = (a[j] - b[j]) * 100.0;
            err_sum += e.norm();
            for k in 0..3 {
                s1[j][k] += e[k];
                s2[j][k] += e[k] * e[k];
            }
        }
    }
    let mut axes = [0.0; 3];
    for j in 0..NUM_JOINTS {
        for k in 0..3 {
            let mean = s1[j][k] / frames;
            axes[k] += (s2[j][k] / frames - mean * mean).max(0.0) / NUM_JOINTS as f64;
        }
    }

    let mesh_of = |p: &HandPose| hand_mesh(model, &forward_kinematics(model, p));
    let (mp, mg) = (mesh_of(pred.last()), mesh_of(gt.last()));
    let verts_offset_cm = mp.vertices.iter().zip(&mg.vertices).map(|(a, b)| (a - b).norm()).sum::<f64>() / mp.vertices.len().max(1) as f64 * 100.0;
    let q = MeshQuery::new(object_mesh);
    let min_dist_cm = clearance(&q, &mp.vertices) * 100.0;
    let gt_min_dist_cm = clearance(&q, &mg.vertices) * 100.0;
    Ok(MotionMetrics {
        mpjpe_cm: err_sum / (frames * NUM_JOINTS as f64),
        ave_cm2: axes.iter().sum::<f64>() / 3.0,
        ave_axes_cm2: axes,
        verts_offset_cm,
        min_dist_cm,
        gt_min_dist_cm,
        min_dist_diff_cm: min_dist_cm - gt_min_dist_cm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub displacement: Displacement,
    /// Final object displacement stayed within the allowed bound.
    pub executable: bool,
}

/// Settles the object against the hand held at the sequence's final pose; the
/// motion is marked executable when the final displacement is at most
/// `max_displacement_cm`.
pub fn safety_check(
    sequence: &MotionSequence,
    object_mesh: &TriangleMesh,
    object_pose: &RigidTransform,
    model: &KinematicModel,
    params: &SimParams,
    max_displacement_cm: f64,
) -> Result<SafetyReport> {
    sequence.validate()?;
    let displacement = simulation_displacement(object_mesh, object_pose, sequence.last(), model, params)?;
    Ok(SafetyReport { executable: displacement.final_cm <= max_displacement_cm, displacement })
}
