use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{icp_rigid, CalibrationError, IcpParams, Result};
use crate::geometry::{PointCloud, TriangleMesh};
use crate::math::RigidTransform;

/// RMS residual (m) above which a tracked frame is flagged for review.
pub const TRACK_REVIEW_RMS: f64 = 0.003;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    /// Object-to-world pose.
    pub pose: RigidTransform,
    /// RMS of the kept ICP correspondences (m).
    pub rms: f64,
    pub flagged: bool,
}

/// Area-weighted surface samples of an object in its own frame.
pub fn object_samples(mesh: &TriangleMesh, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(mesh.sample_surface(n, &mut rng).iter().map(|s| mesh.point_at(s)).collect())
}

/// Tracks an object through `clouds`: frame 0 takes `first_pose` as given and
/// every later frame runs ICP from the previous pose. Frames whose residual
/// exceeds `review_rms` are flagged, not rejected.
pub fn track_object_pose(
    object_samples: &PointCloud,
    clouds: &[PointCloud],
    first_pose: &RigidTransform,
    params: &IcpParams,
    review_rms: f64,
) -> Result<Vec<TrackedFrame>> {
    let mut out: Vec<TrackedFrame> = Vec::with_capacity(clouds.len());
    for (index, cloud) in clouds.iter().enumerate() {
        let frame_err = |e| CalibrationError::Frame { index, source: Box::new(e) };
        let (pose, rms) = if index == 0 {
            // Frame 0 is the supplied annotation; report its fit without moving it.
            let probe = IcpParams { max_iterations: 1, ..params.clone() };
            let fit = icp_rigid(object_samples, cloud, first_pose, &probe).map_err(frame_err)?;
            (*first_pose, fit.residuals[0])
        } else {
            let fit = icp_rigid(object_samples, cloud, &out[index - 1].pose, params).map_err(frame_err)?;
            (fit.transform, fit.rms)
        };
        out.push(TrackedFrame { pose, rms, flagged: rms > review_rms });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn mug() -> TriangleMesh {
        let mut m = TriangleMesh::cylinder(0.04, 0.1, 24);
        m.append(&TriangleMesh::cuboid(Vec3::new(0.05, 0.0, 0.05), Vec3::new(0.02, 0.01, 0.06)));
        m
    }

    fn pose(t: usize) -> RigidTransform {
        RigidTransform::from_translation_axis_angle(Vec3::new(0.005 * t as f64, 0.1, 0.0), Vec3::new(0.0, 0.0, 0.3))
    }

    #[test]
    fn static_object_keeps_first_pose() {
        let samples = object_samples(&mug(), 1500, 1);
        let clouds = vec![samples.transformed(&pose(0)); 10];
        let frames = track_object_pose(&samples, &clouds, &pose(0), &IcpParams::default(), TRACK_REVIEW_RMS).unwrap();
        for f in &frames {
            let (a, t) = f.pose.distance_to(&pose(0));
            assert!(a < 1e-6 && t < 1e-6 && !f.flagged);
        }
    }

    #[test]
    fn translating_object_and_reverse_tracking() {
        let mesh = mug();
        let samples = object_samples(&mesh, 1500, 1);
        let clouds: Vec<_> = (0..10).map(|t| object_samples(&mesh, 4000, 100 + t as u64).transformed(&pose(t))).collect();
        let fwd = track_object_pose(&samples, &clouds, &pose(0), &IcpParams::default(), TRACK_REVIEW_RMS).unwrap();
        let tol = 1e-3;
        for (t, f) in fwd.iter().enumerate() {
            assert!(f.pose.distance_to(&pose(t)).1 < tol, "frame {t}");
            assert!(!f.flagged, "frame {t} rms {}", f.rms);
        }
        let rev_clouds: Vec<_> = clouds.iter().rev().cloned().collect();
        let rev = track_object_pose(&samples, &rev_clouds, &fwd[9].pose, &IcpParams::default(), TRACK_REVIEW_RMS).unwrap();
        for (k, f) in rev.iter().enumerate() {
            assert!(f.pose.distance_to(&pose(9 - k)).1 < 2.0 * tol);
        }
    }

    #[test]
    fn occluded_frame_is_flagged() {
        let mesh = mug();
        let samples = object_samples(&mesh, 1500, 1);
        let mut clouds: Vec<_> = (0..4).map(|_| object_samples(&mesh, 4000, 7).transformed(&pose(0))).collect();
        // Keep only the 10% of points with the largest x: 90% occlusion.
        let c = &clouds[2];
        let mut order: Vec<usize> = (0..c.len()).collect();
        order.sort_by(|&a, &b| c.points[b].x.total_cmp(&c.points[a].x));
        clouds[2] = c.select(&order[..c.len() / 10]);
        let frames = track_object_pose(&samples, &clouds, &pose(0), &IcpParams::default(), TRACK_REVIEW_RMS).unwrap();
        assert!(!frames[1].flagged);
        assert!(frames[2].flagged, "rms {}", frames[2].rms);
    }
}
