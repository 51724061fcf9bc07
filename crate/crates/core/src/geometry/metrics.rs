use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{GeometryError, MeshQuery, PointCloud, PointGrid, Result, TriangleMesh};
use crate::math::Vec3;

/// Per-object-point contact flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactMap {
    pub flags: Vec<bool>,
    pub threshold_m: f64,
}

impl ContactMap {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn contact_indices(&self) -> Vec<usize> {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }
}

/// Flags object points lying within `threshold_m` of any hand point.
pub fn contact_map(object_cloud: &PointCloud, hand_points: &[Vec3], threshold_m: f64) -> Result<ContactMap> {
    if object_cloud.is_empty() {
        return Err(GeometryError::Empty("object cloud"));
    }
    if hand_points.is_empty() {
        return Err(GeometryError::Empty("hand points"));
    }
    let grid = PointGrid::new(hand_points);
    let t2 = threshold_m * threshold_m;
    let flags = object_cloud
        .points
        .iter()
        .map(|p| grid.nearest(p).is_some_and(|(_, d2)| d2 <= t2))
        .collect();
    Ok(ContactMap { flags, threshold_m })
}

/// `Σ_a min_b ‖a−b‖² + Σ_b min_a ‖b−a‖²`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::Empty("chamfer point set"));
    }
    let one_sided = |from: &[Vec3], to: &[Vec3]| -> f64 {
        let grid = PointGrid::new(to);
        from.iter().map(|p| grid.nearest(p).map_or(0.0, |(_, d2)| d2)).sum()
    };
    Ok(one_sided(a, b) + one_sided(b, a))
}

/// Deepest penetration of any hand point into the object, in meters; 0 when
/// every point is outside.
pub fn penetration_distance(hand_points: &[Vec3], object_mesh: &TriangleMesh) -> Result<f64> {
    let query = MeshQuery::watertight(object_mesh)?;
    penetration_with(&query, hand_points)
}

pub(crate) fn penetration_with(query: &MeshQuery, hand_points: &[Vec3]) -> Result<f64> {
    let mut deepest: f64 = 0.0;
    for p in hand_points {
        if !query.near_bounds(p, 0.0) {
            continue;
        }
        deepest = deepest.max(-query.signed_distance(p)?);
    }
    Ok(deepest)
}

/// One posed link of an articulated hand for the self-intersection metric.
#[derive(Debug, Clone)]
pub struct PosedLink {
    pub mesh: TriangleMesh,
    /// Index (within the same list) of the nearest ancestor link that carries geometry.
    pub parent: Option<usize>,
    /// World position of the joint connecting this link to its parent.
    pub joint_origin: Vec3,
}

const M3_TO_CM3: f64 = 1e6;

fn voxel_range(lo: f64, hi: f64, voxel: f64) -> std::ops::RangeInclusive<i64> {
    // Voxel i has its center at (i + 0.5)·voxel.
    let first = (lo / voxel - 0.5).ceil() as i64;
    let last = (hi / voxel - 0.5).floor() as i64;
    first..=last
}

fn overlap(a: &(Vec3, Vec3), b: &(Vec3, Vec3)) -> Option<(Vec3, Vec3)> {
    let lo = a.0.sup(&b.0);
    let hi = a.1.inf(&b.1);
    (lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z).then_some((lo, hi))
}

/// Volume in cm³ covered by at least two distinct links, estimated on a voxel
/// lattice of pitch `voxel_m`. A parent–child pair is not counted inside a
/// sphere of radius `collar_m` around their shared joint.
pub fn self_intersection_volume(links: &[PosedLink], voxel_m: f64, collar_m: f64) -> Result<f64> {
    if voxel_m <= 0.0 || !voxel_m.is_finite() {
        return Err(GeometryError::InvalidParameter(format!("voxel size {voxel_m}")));
    }
    let queries: Vec<MeshQuery> = links.iter().map(|l| MeshQuery::watertight(&l.mesh)).collect::<Result<_>>()?;
    let bounds: Vec<(Vec3, Vec3)> = queries.iter().map(|q| q.bounds()).collect();
    let mut counted: HashSet<(i64, i64, i64)> = HashSet::new();
    for a in 0..links.len() {
        for b in a + 1..links.len() {
            let Some((lo, hi)) = overlap(&bounds[a], &bounds[b]) else { continue };
            let joint = if links[b].parent == Some(a) {
                Some(links[b].joint_origin)
            } else if links[a].parent == Some(b) {
                Some(links[a].joint_origin)
            } else {
                None
            };
            for i in voxel_range(lo.x, hi.x, voxel_m) {
                for j in voxel_range(lo.y, hi.y, voxel_m) {
                    for k in voxel_range(lo.z, hi.z, voxel_m) {
                        if counted.contains(&(i, j, k)) {
                            continue;
                        }
                        let c = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel_m;
                        if joint.is_some_and(|o| (c - o).norm() <= collar_m) {
                            continue;
                        }
                        if queries[a].contains(&c)? && queries[b].contains(&c)? {
                            counted.insert((i, j, k));
                        }
                    }
                }
            }
        }
    }
    Ok(counted.len() as f64 * voxel_m.powi(3) * M3_TO_CM3)
}

/// Volume in cm³ shared by the object and at least one hand link.
pub fn hand_object_intersection_volume(links: &[TriangleMesh], object_mesh: &TriangleMesh, voxel_m: f64) -> Result<f64> {
    if voxel_m <= 0.0 || !voxel_m.is_finite() {
        return Err(GeometryError::InvalidParameter(format!("voxel size {voxel_m}")));
    }
    let object = MeshQuery::watertight(object_mesh)?;
    let ob = object.bounds();
    let mut counted: HashSet<(i64, i64, i64)> = HashSet::new();
    for link in links {
        let q = MeshQuery::watertight(link)?;
        let Some((lo, hi)) = overlap(&q.bounds(), &ob) else { continue };
        for i in voxel_range(lo.x, hi.x, voxel_m) {
            for j in voxel_range(lo.y, hi.y, voxel_m) {
                for k in voxel_range(lo.z, hi.z, voxel_m) {
                    if counted.contains(&(i, j, k)) {
                        continue;
                    }
                    let c = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel_m;
                    if q.contains(&c)? && object.contains(&c)? {
                        counted.insert((i, j, k));
                    }
                }
            }
        }
    }
    Ok(counted.len() as f64 * voxel_m.powi(3) * M3_TO_CM3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube_cm(origin_cm: Vec3) -> TriangleMesh {
        TriangleMesh::aabb_box(origin_cm * 0.01, (origin_cm + Vec3::repeat(1.0)) * 0.01)
    }

    fn free(mesh: TriangleMesh) -> PosedLink {
        PosedLink { mesh, parent: None, joint_origin: Vec3::zeros() }
    }

    #[test]
    fn chamfer_fixtures() {
        let a = [Vec3::zeros(), Vec3::x()];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&[Vec3::zeros()], &[Vec3::x()]).unwrap(), 2.0);
        assert_eq!(chamfer_distance(&a, &[Vec3::zeros()]).unwrap(), 1.0);
        assert!(chamfer_distance(&[], &a).is_err());
    }

    #[test]
    fn contact_flags() {
        let obj = PointCloud::new(vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)]);
        let hand = [Vec3::zeros()];
        let map = contact_map(&obj, &hand, 0.005).unwrap();
        assert_eq!(map.flags, vec![true, false]);
        let exact = contact_map(&obj, &[Vec3::new(0.0, 0.0, 1e-12)], 0.0).unwrap();
        assert_eq!(exact.flags, vec![false, false]);
        assert_eq!(contact_map(&obj, &hand, 0.0).unwrap().flags, vec![true, false]);
        assert!(contact_map(&PointCloud::default(), &hand, 0.005).is_err());
    }

    #[test]
    fn penetration_fixtures() {
        let cube = TriangleMesh::aabb_box(Vec3::zeros(), Vec3::repeat(1.0));
        let outside = [Vec3::new(2.0, 0.5, 0.5), Vec3::new(-0.1, 0.5, 0.5)];
        assert_eq!(penetration_distance(&outside, &cube).unwrap(), 0.0);
        let one = [Vec3::new(0.003, 0.5, 0.5), Vec3::new(2.0, 0.0, 0.0)];
        assert!((penetration_distance(&one, &cube).unwrap() - 0.003).abs() < 1e-12);
        let two = [Vec3::new(0.5, 0.001, 0.5), Vec3::new(0.5, 0.5, 0.993)];
        assert!((penetration_distance(&two, &cube).unwrap() - 0.007).abs() < 1e-12);
    }

    #[test]
    fn self_intersection_fixtures() {
        let disjoint = [free(cube_cm(Vec3::zeros())), free(cube_cm(Vec3::new(2.0, 0.0, 0.0)))];
        assert_eq!(self_intersection_volume(&disjoint, 0.0005, 0.004).unwrap(), 0.0);
        let coincident = [free(cube_cm(Vec3::zeros())), free(cube_cm(Vec3::zeros()))];
        let v = self_intersection_volume(&coincident, 0.0005, 0.004).unwrap();
        assert!((v - 1.0).abs() <= 0.05, "{v}");
        let half = [free(cube_cm(Vec3::zeros())), free(cube_cm(Vec3::new(0.5, 0.0, 0.0)))];
        let v = self_intersection_volume(&half, 0.0005, 0.004).unwrap();
        assert!((v - 0.5).abs() <= 0.025, "{v}");
        let fine = self_intersection_volume(&half, 0.00025, 0.004).unwrap();
        assert!(((fine - v) / v).abs() < 0.02);
    }

    #[test]
    fn collar_exempts_parent_child_overlap_near_joint() {
        let parent = cube_cm(Vec3::zeros());
        let child = TriangleMesh::aabb_box(Vec3::new(0.009, 0.0, 0.0), Vec3::new(0.02, 0.01, 0.01));
        let joint = Vec3::new(0.0095, 0.005, 0.005);
        let links = [free(parent.clone()), PosedLink { mesh: child.clone(), parent: Some(0), joint_origin: joint }];
        assert_eq!(self_intersection_volume(&links, 0.0005, 0.02).unwrap(), 0.0);
        let unrelated = [free(parent), free(child)];
        assert!(self_intersection_volume(&unrelated, 0.0005, 0.02).unwrap() > 0.0);
    }

    #[test]
    fn hand_object_overlap() {
        let obj = cube_cm(Vec3::zeros());
        let v = hand_object_intersection_volume(&[cube_cm(Vec3::new(0.5, 0.0, 0.0))], &obj, 0.0005).unwrap();
        assert!((v - 0.5).abs() < 0.025);
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_nonnegative(xs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..20),
                                         ys in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..20)) {
            let a: Vec<Vec3> = xs.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let b: Vec<Vec3> = ys.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let ab = chamfer_distance(&a, &b).unwrap();
            let ba = chamfer_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn penetration_monotone_deeper_into_convex(depth in 0.0..0.4f64, step in 0.0..0.1f64) {
            let cube = TriangleMesh::aabb_box(Vec3::zeros(), Vec3::repeat(1.0));
            let pts = |d: f64| vec![Vec3::new(0.5, 0.5, 1.0 - d), Vec3::new(0.2, 0.7, 1.05 - d)];
            let shallow = penetration_distance(&pts(depth), &cube).unwrap();
            let deep = penetration_distance(&pts(depth + step), &cube).unwrap();
            prop_assert!(deep >= shallow);
        }
    }
}
