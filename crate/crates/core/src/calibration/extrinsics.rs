use std::collections::VecDeque;

use super::{icp_rigid, CalibrationError, IcpParams, Result};
use crate::geometry::PointCloud;
use crate::math::RigidTransform;

/// ICP passes per camera pair; pass `k` gates correspondences at
/// `max_correspondence / 2^k`. Partial views overlap only in part, and the
/// shrinking gate drops pairs that straddle the edge of the shared surface.
pub const REFINE_STAGES: usize = 3;

/// Refines camera-to-world extrinsics by ICP between neighboring views.
///
/// Camera 0 is the reference and keeps its rough extrinsic. Cameras are
/// visited breadth-first over `neighbor_pairs`; each newly reached camera is
/// aligned against the already-refined neighbor it was reached from, so
/// corrections chain along the pair graph.
pub fn refine_extrinsics(
    view_clouds: &[PointCloud],
    rough_extrinsics: &[RigidTransform],
    neighbor_pairs: &[(usize, usize)],
    params: &IcpParams,
) -> Result<Vec<RigidTransform>> {
    let n = view_clouds.len();
    if rough_extrinsics.len() != n {
        return Err(CalibrationError::Params(format!("{n} clouds but {} extrinsics", rough_extrinsics.len())));
    }
    if let Some(&(a, b)) = neighbor_pairs.iter().find(|(a, b)| *a >= n || *b >= n || a == b) {
        return Err(CalibrationError::Params(format!("invalid camera pair ({a}, {b})")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut refined: Vec<Option<RigidTransform>> = vec![None; n];
    refined[0] = Some(rough_extrinsics[0]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let world_i = view_clouds[i].transformed(&refined[i].expect("visited camera is refined"));
        for &(a, b) in neighbor_pairs {
            let j = match (a == i, b == i) {
                (true, _) => b,
                (_, true) => a,
                _ => continue,
            };
            if refined[j].is_some() {
                continue;
            }
            let mut t = rough_extrinsics[j];
            for stage in 0..REFINE_STAGES {
                let p = IcpParams { max_correspondence: params.max_correspondence / f64::from(1u32 << stage), ..params.clone() };
                t = icp_rigid(&view_clouds[j], &world_i, &t, &p)
                    .map_err(|e| CalibrationError::Frame { index: j, source: Box::new(e) })?
                    .transform;
            }
            refined[j] = Some(t);
            queue.push_back(j);
        }
    }
    refined
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| CalibrationError::Disconnected(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriangleMesh;
    use crate::math::Vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Camera `k` of 4 sits on a 135° arc around the object, neighbors 45° apart.
    fn camera(k: usize) -> RigidTransform {
        let yaw = k as f64 * std::f64::consts::FRAC_PI_4 + 0.3;
        let pos = Vec3::new(0.5 * yaw.cos(), 0.5 * yaw.sin(), 0.3);
        RigidTransform::from_translation_axis_angle(pos, Vec3::new(0.0, 0.0, yaw + 1.0))
    }

    fn object_points(n: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>) {
        let mut mesh = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 0.05), Vec3::new(0.16, 0.08, 0.1));
        mesh.append(&TriangleMesh::sphere(Vec3::new(0.035, 0.0, 0.13), 0.035, 16, 24));
        let tilt = RigidTransform::from_translation_axis_angle(Vec3::new(-0.045, 0.01, 0.12), Vec3::new(0.3, 0.2, 0.6));
        mesh.append(&TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.05, 0.04, 0.06)).transformed(&tilt));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = mesh.sample_surface(n, &mut rng);
        (s.iter().map(|s| mesh.point_at(s)).collect(), s.iter().map(|s| mesh.triangle_normal(s.triangle)).collect())
    }

    /// Points whose normals face camera `k` (all points when `full`), in that camera's frame.
    fn scan(k: usize, full: bool, seed: u64) -> PointCloud {
        let (pts, normals) = object_points(20_000, seed);
        let cam = camera(k);
        let keep: Vec<Vec3> = pts
            .iter()
            .zip(&normals)
            .filter(|(p, n)| full || n.dot(&(cam.translation - *p)) > 0.0)
            .map(|(p, _)| cam.inverse().apply(p))
            .collect();
        PointCloud::new(keep)
    }

    #[test]
    fn exact_extrinsics_are_a_fixed_point() {
        let clouds: Vec<_> = (0..4).map(|k| scan(k, true, 17)).collect();
        let truth: Vec<_> = (0..4).map(camera).collect();
        let out = refine_extrinsics(&clouds, &truth, &[(0, 1), (1, 2), (2, 3)], &IcpParams::default()).unwrap();
        for (o, t) in out.iter().zip(&truth) {
            let (a, s) = o.distance_to(t);
            assert!(a < 1e-6 && s < 1e-6);
        }
    }

    #[test]
    fn perturbed_partial_views_recover() {
        // Independent draws per camera: no two views share exact points.
        let clouds: Vec<_> = (0..4).map(|k| scan(k, false, 17 + k as u64)).collect();
        let truth: Vec<_> = (0..4).map(camera).collect();
        let rough: Vec<_> = truth
            .iter()
            .enumerate()
            .map(|(k, t)| {
                if k == 0 {
                    return *t;
                }
                let axis = Vec3::new(1.0, -0.5 * k as f64, 0.7).normalize();
                let dir = Vec3::new(-0.3, 1.0, 0.2 * k as f64).normalize();
                RigidTransform::from_translation_axis_angle(dir * 0.02, axis * 3f64.to_radians()).compose(t)
            })
            .collect();
        let pairs = [(0, 1), (1, 2), (2, 3)];
        let out = refine_extrinsics(&clouds, &rough, &pairs, &IcpParams::default()).unwrap();
        for (o, t) in out.iter().zip(&truth) {
            let (a, s) = o.distance_to(t);
            assert!(a.to_degrees() < 0.3 && s < 2e-3, "{} deg {s} m", a.to_degrees());
        }
    }

    #[test]
    fn single_camera_and_disconnected_graph() {
        let c = scan(0, true, 17);
        let out = refine_extrinsics(std::slice::from_ref(&c), &[RigidTransform::identity()], &[], &IcpParams::default()).unwrap();
        assert_eq!(out, vec![RigidTransform::identity()]);
        let err = refine_extrinsics(&[c.clone(), c], &[RigidTransform::identity(); 2], &[], &IcpParams::default()).unwrap_err();
        assert!(matches!(err, CalibrationError::Disconnected(1)));
    }
}
