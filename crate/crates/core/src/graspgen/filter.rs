use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GraspCandidate, Result};
use crate::geometry::{contact_map, PointCloud, PointGrid, DEFAULT_CONTACT_THRESHOLD_M};
use crate::kinematics::{forward_kinematics, HandPose, HandSurfaceSampler, KinematicModel};

/// Minimum contact required to keep a grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityFilter {
    pub min_contacts: usize,
    pub min_links: usize,
    pub threshold_m: f64,
    pub hand_points: usize,
    pub seed: u64,
}

impl Default for StabilityFilter {
    fn default() -> Self {
        Self { min_contacts: 10, min_links: 2, threshold_m: DEFAULT_CONTACT_THRESHOLD_M, hand_points: 2048, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactSummary {
    /// Object points within the threshold of the hand surface.
    pub points: usize,
    /// Distinct links owning a hand sample within the threshold of the object.
    pub links: BTreeSet<usize>,
}

pub fn contact_summary(hand: &KinematicModel, sampler: &HandSurfaceSampler, pose: &HandPose, object_cloud: &PointCloud, threshold_m: f64) -> Result<ContactSummary> {
    let set = sampler.sample(&forward_kinematics(hand, pose));
    let points = contact_map(object_cloud, &set.points, threshold_m)?.count();
    let grid = PointGrid::new(&object_cloud.points);
    let t2 = threshold_m * threshold_m;
    let links = set
        .points
        .iter()
        .zip(&set.source_link)
        .filter(|(p, _)| grid.nearest(p).is_some_and(|(_, d2)| d2 <= t2))
        .map(|(_, &l)| l)
        .collect();
    Ok(ContactSummary { points, links })
}

/// Keeps candidates whose current pose touches at least `min_contacts` object
/// points with at least `min_links` distinct links. Order is preserved.
pub fn filter_unstable(candidates: &[GraspCandidate], object_cloud: &PointCloud, hand: &KinematicModel, filter: &StabilityFilter) -> Result<Vec<GraspCandidate>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let sampler = HandSurfaceSampler::new(hand, filter.hand_points, filter.seed)?;
    let keep = candidates
        .par_iter()
        .map(|c| {
            let s = contact_summary(hand, &sampler, &c.pose, object_cloud, filter.threshold_m)?;
            Ok(s.points >= filter.min_contacts && s.links.len() >= filter.min_links)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(candidates.iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| c.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ContactMap;
    use crate::kinematics::toy_hand;
    use crate::math::Vec3;

    fn candidate(id: usize, pose: HandPose) -> GraspCandidate {
        GraspCandidate { id, pose, contact: ContactMap { flags: vec![], threshold_m: 0.005 }, metrics: None, score: None }
    }

    /// 40 object points 1 mm outside the surface samples of three links.
    fn touching_cloud(hand: &KinematicModel, pose: &HandPose) -> (PointCloud, Vec<usize>) {
        let sampler = HandSurfaceSampler::new(hand, 2048, 9).unwrap();
        let set = sampler.sample(&forward_kinematics(hand, pose));
        let mut chosen_links: Vec<usize> = set.source_link.clone();
        chosen_links.sort();
        chosen_links.dedup();
        let links = vec![chosen_links[0], chosen_links[3], chosen_links[7]];
        let mut pts = Vec::new();
        for &l in &links {
            let on: Vec<usize> = (0..set.len()).filter(|&i| set.source_link[i] == l).collect();
            let take = if l == links[2] { 14 } else { 13 };
            for &i in on.iter().step_by((on.len() / take).max(1)).take(take) {
                pts.push(set.points[i] + 0.001 * set.normals[i]);
            }
        }
        assert_eq!(pts.len(), 40);
        (PointCloud::new(pts), links)
    }

    #[test]
    fn keeps_touching_and_drops_free_candidates() {
        let hand = toy_hand();
        let pose = HandPose::default();
        let (cloud, links) = touching_cloud(&hand, &pose);
        let filter = StabilityFilter { seed: 9, ..StabilityFilter::default() };
        let sampler = HandSurfaceSampler::new(&hand, filter.hand_points, filter.seed).unwrap();
        let s = contact_summary(&hand, &sampler, &pose, &cloud, 0.005).unwrap();
        assert_eq!(s.points, 40);
        assert!(links.iter().all(|l| s.links.contains(l)));

        let mut far = pose;
        far.set_translation(Vec3::new(1.0, 0.0, 0.0));
        let cands = vec![candidate(0, far), candidate(1, pose), candidate(2, far), candidate(3, pose)];
        let kept = filter_unstable(&cands, &cloud, &hand, &filter).unwrap();
        assert_eq!(kept.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 3]);

        let strict = StabilityFilter { min_links: 8, ..filter.clone() };
        assert!(filter_unstable(&cands, &cloud, &hand, &strict).unwrap().is_empty());
        assert!(filter_unstable(&[], &cloud, &hand, &StabilityFilter::default()).unwrap().is_empty());
    }
}
