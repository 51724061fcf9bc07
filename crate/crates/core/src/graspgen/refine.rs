//! Test-time pose optimization against a predicted contact map.
//!
//! Objective over hand surface samples `H` and contact-labelled object points `C`:
//!
//! ```text
//! E(φ) = 1/|C| Σ_c min_h ‖h − c‖²  +  w/|H| Σ_h max(0, −sd(h))²
//! ```
//!
//! where `sd` is the signed distance to the object mesh (negative inside).

use serde::{Deserialize, Serialize};

use super::{GraspCandidate, GraspError, Result};
use crate::geometry::{MeshQuery, PointCloud, PointGrid, TriangleMesh};
use crate::kinematics::{clamp_to_limits, forward_kinematics, pose_gradient, HandPose, HandSurfaceSampler, KinematicModel, PoseGradient};
use crate::math::{axis_angle_from_rotation, rotation_from_axis_angle, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    pub iterations: usize,
    pub penetration_weight: f64,
    /// First trial step; doubled after each accepted step, halved on rejection.
    pub initial_step: f64,
    pub min_step: f64,
    pub gradient_tol: f64,
    pub hand_points: usize,
    pub seed: u64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self { iterations: 100, penetration_weight: 100.0, initial_step: 1.0, min_step: 1e-12, gradient_tol: 1e-12, hand_points: 512, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub accepted: usize,
}

/// Objective value and its gradient (root rotation in the left tangent).
pub fn refinement_objective(
    hand: &KinematicModel,
    sampler: &HandSurfaceSampler,
    pose: &HandPose,
    targets: &[Vec3],
    object: &MeshQuery,
    penetration_weight: f64,
) -> Result<(f64, PoseGradient)> {
    let fk = forward_kinematics(hand, pose);
    let set = sampler.sample(&fk);
    let mut grads = vec![Vec3::zeros(); set.len()];
    let mut value = 0.0;
    if !targets.is_empty() {
        let grid = PointGrid::new(&set.points);
        let w = 1.0 / targets.len() as f64;
        for c in targets {
            let (i, d2) = grid.nearest(c).expect("hand points");
            value += w * d2;
            grads[i] += 2.0 * w * (set.points[i] - c);
        }
    }
    let w = penetration_weight / set.len() as f64;
    for (h, g) in set.points.iter().zip(&mut grads) {
        if !object.near_bounds(h, 0.0) {
            continue;
        }
        let (q, sd) = object.signed_closest(h)?;
        if sd < 0.0 {
            value += w * sd * sd;
            *g += 2.0 * w * (h - q);
        }
    }
    Ok((value, pose_gradient(hand, &fk, &set.points, &set.source_link, &grads)))
}

fn step(hand: &KinematicModel, pose: &HandPose, g: &PoseGradient, alpha: f64) -> HandPose {
    let mut out = *pose;
    let mut theta = pose.theta;
    for (t, d) in theta.iter_mut().zip(&g.theta) {
        *t -= alpha * d;
    }
    out.theta = clamp_to_limits(hand, &theta);
    out.set_translation(pose.translation() - alpha * g.translation);
    let r = rotation_from_axis_angle(&(-alpha * g.rotation_tangent)) * rotation_from_axis_angle(&pose.rotation_vector());
    out.set_rotation_vector(axis_angle_from_rotation(&r));
    out
}

fn grad_norm(g: &PoseGradient) -> f64 {
    (g.theta.iter().map(|v| v * v).sum::<f64>() + g.translation.norm_squared() + g.rotation_tangent.norm_squared()).sqrt()
}

/// Projected gradient descent with backtracking. Only strictly improving steps
/// are accepted and joint limits hold at every iterate.
pub fn refine_to_contact(
    candidate: &GraspCandidate,
    object_cloud: &PointCloud,
    object_mesh: &TriangleMesh,
    hand: &KinematicModel,
    params: &RefineParams,
) -> Result<(GraspCandidate, RefineReport)> {
    let query = MeshQuery::watertight(object_mesh)?;
    if candidate.contact.len() != object_cloud.len() {
        return Err(GraspError::Dim(format!("contact map has {} flags for {} object points", candidate.contact.len(), object_cloud.len())));
    }
    let targets: Vec<Vec3> = candidate.contact.contact_indices().into_iter().map(|i| object_cloud.points[i]).collect();
    let sampler = HandSurfaceSampler::new(hand, params.hand_points, params.seed)?;
    let mut pose = candidate.pose;
    pose.theta = clamp_to_limits(hand, &pose.theta);
    let (mut value, mut grad) = refinement_objective(hand, &sampler, &pose, &targets, &query, params.penetration_weight)?;
    let mut report = RefineReport { objective: vec![value], accepted: 0 };
    let mut alpha = params.initial_step;
    for _ in 0..params.iterations {
        if grad_norm(&grad) <= params.gradient_tol {
            break;
        }
        let mut accepted = None;
        while alpha >= params.min_step {
            let trial = step(hand, &pose, &grad, alpha);
            let (v, g) = refinement_objective(hand, &sampler, &trial, &targets, &query, params.penetration_weight)?;
            if v < value {
                accepted = Some((trial, v, g));
                break;
            }
            alpha *= 0.5;
        }
        let Some((p, v, g)) = accepted else { break };
        (pose, value, grad) = (p, v, g);
        report.objective.push(value);
        report.accepted += 1;
        alpha *= 2.0;
    }
    let out = GraspCandidate { pose, metrics: None, ..candidate.clone() };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ContactMap, DEFAULT_CONTACT_THRESHOLD_M};
    use crate::kinematics::{toy_hand, POSE_DIM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere_fixture() -> (TriangleMesh, PointCloud, ContactMap) {
        let mesh = TriangleMesh::sphere(Vec3::zeros(), 0.04, 16, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = PointCloud::new(mesh.sample_surface(1500, &mut rng).iter().map(|s| mesh.point_at(s)).collect());
        let flags = cloud.points.iter().map(|p| p.y > 0.03).collect();
        (mesh, cloud, ContactMap { flags, threshold_m: DEFAULT_CONTACT_THRESHOLD_M })
    }

    /// Palm 5 cm above the +y pole, facing it.
    fn hovering(contact: ContactMap) -> GraspCandidate {
        let mut pose = HandPose::default();
        pose.eta = [0.0, 0.04 + 0.05 + 0.01, -0.045, 0.0, 0.0, 0.0];
        GraspCandidate { id: 0, pose, contact, metrics: None, score: None }
    }

    fn mean_target_distance(hand: &KinematicModel, pose: &HandPose, cloud: &PointCloud, contact: &ContactMap) -> f64 {
        let sampler = HandSurfaceSampler::new(hand, 512, 0).unwrap();
        let pts = sampler.points(&forward_kinematics(hand, pose));
        let grid = PointGrid::new(&pts);
        let idx = contact.contact_indices();
        idx.iter().map(|&i| grid.nearest(&cloud.points[i]).unwrap().1.sqrt()).sum::<f64>() / idx.len() as f64
    }

    #[test]
    fn pulls_hand_onto_sphere() {
        let hand = toy_hand();
        let (mesh, cloud, contact) = sphere_fixture();
        let cand = hovering(contact.clone());
        let before = mean_target_distance(&hand, &cand.pose, &cloud, &contact);
        let (out, report) = refine_to_contact(&cand, &cloud, &mesh, &hand, &RefineParams::default()).unwrap();
        let after = mean_target_distance(&hand, &out.pose, &cloud, &contact);
        assert!(before > 0.05, "fixture distance {before}");
        assert!(after <= 0.5 * before, "{before} -> {after}");
        assert!(report.objective.windows(2).all(|w| w[1] <= w[0]));
        for j in 0..22 {
            let (lo, hi) = hand.limits(j);
            assert!(out.pose.theta[j] >= lo && out.pose.theta[j] <= hi);
        }
    }

    #[test]
    fn zero_gradient_leaves_pose() {
        let hand = toy_hand();
        let (mesh, cloud, contact) = sphere_fixture();
        let none = ContactMap { flags: vec![false; contact.len()], ..contact };
        let cand = hovering(none);
        let (out, report) = refine_to_contact(&cand, &cloud, &mesh, &hand, &RefineParams::default()).unwrap();
        for (a, b) in out.pose.to_array().iter().zip(cand.pose.to_array()) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(report.accepted, 0);
    }

    #[test]
    fn rejects_open_mesh_and_misaligned_map() {
        let hand = toy_hand();
        let (mesh, cloud, contact) = sphere_fixture();
        let mut open = mesh.clone();
        open.triangles.pop();
        let cand = hovering(contact.clone());
        assert!(matches!(refine_to_contact(&cand, &cloud, &open, &hand, &RefineParams::default()), Err(GraspError::Geometry(_))));
        let short = hovering(ContactMap { flags: vec![true; 3], ..contact });
        assert!(refine_to_contact(&short, &cloud, &mesh, &hand, &RefineParams::default()).is_err());
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let hand = toy_hand();
        let (mesh, cloud, contact) = sphere_fixture();
        let query = MeshQuery::watertight(&mesh).unwrap();
        let sampler = HandSurfaceSampler::new(&hand, 256, 1).unwrap();
        let targets: Vec<Vec3> = contact.contact_indices().into_iter().map(|i| cloud.points[i]).collect();
        let mut pose = HandPose::default();
        for (j, t) in pose.theta.iter_mut().enumerate() {
            *t = 0.2 + 0.01 * j as f64;
        }
        // Palm slightly inside the sphere so both terms are active.
        pose.eta = [0.005, 0.045, -0.04, 0.1, -0.05, 0.08];
        let (v0, g) = refinement_objective(&hand, &sampler, &pose, &targets, &query, 100.0).unwrap();
        assert!(v0 > 0.0);
        let flat = g.to_array(&pose);
        let base = pose.to_array();
        let f = |x: &[f64; POSE_DIM]| refinement_objective(&hand, &sampler, &HandPose::from_slice(x).unwrap(), &targets, &query, 100.0).unwrap().0;
        let h = 1e-7;
        let fd: Vec<f64> = (0..POSE_DIM)
            .map(|k| {
                let (mut p, mut m) = (base, base);
                p[k] += h;
                m[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = fd.iter().zip(&flat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-3, "relative error {}", diff / norm);
    }
}
