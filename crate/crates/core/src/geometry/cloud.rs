use super::{GeometryError, PointGrid, Result};
use crate::math::{RigidTransform, Vec3};

/// Sensor or sampled point set in meters, with optional colors in `[0,1]` and
/// per-point capture timestamps in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub timestamps: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, colors: None, timestamps: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            colors: self.colors.clone(),
            timestamps: self.timestamps.clone(),
        }
    }

    /// Keeps the points at `indices`, in that order, along with their attributes.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            timestamps: self.timestamps.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vec3>() / self.points.len() as f64)
    }
}

/// Statistical outlier removal: drops every point whose mean distance to its
/// `k` nearest neighbors (itself excluded) exceeds the global mean of that
/// statistic by more than `sigma` population standard deviations. Survivors
/// keep their input order.
pub fn denoise_statistical(cloud: &PointCloud, k: usize, sigma: f64) -> Result<PointCloud> {
    let n = cloud.len();
    if n <= k || k == 0 {
        return Err(GeometryError::InsufficientPoints { have: n, need: k });
    }
    let grid = PointGrid::new(&cloud.points);
    let mean_dist: Vec<f64> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = grid.knn(p, k, Some(i));
            nn.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / k as f64
        })
        .collect();
    let mean = mean_dist.iter().sum::<f64>() / n as f64;
    let var = mean_dist.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let cutoff = mean + sigma * var.sqrt();
    let keep: Vec<usize> = (0..n).filter(|&i| mean_dist[i] <= cutoff).collect();
    Ok(cloud.select(&keep))
}

/// Transforms each view into the common frame and concatenates them in order.
pub fn merge_views(clouds: &[PointCloud], extrinsics: &[RigidTransform]) -> Result<PointCloud> {
    if clouds.len() != extrinsics.len() {
        return Err(GeometryError::LengthMismatch(clouds.len(), extrinsics.len()));
    }
    let keep_colors = !clouds.is_empty() && clouds.iter().all(|c| c.colors.is_some());
    let keep_times = !clouds.is_empty() && clouds.iter().all(|c| c.timestamps.is_some());
    let mut out = PointCloud::default();
    let mut colors = Vec::new();
    let mut times = Vec::new();
    for (cloud, t) in clouds.iter().zip(extrinsics) {
        out.points.extend(cloud.points.iter().map(|p| t.apply(p)));
        if keep_colors {
            colors.extend_from_slice(cloud.colors.as_ref().unwrap());
        }
        if keep_times {
            times.extend_from_slice(cloud.timestamps.as_ref().unwrap());
        }
    }
    out.colors = keep_colors.then_some(colors);
    out.timestamps = keep_times.then_some(times);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn grid_cloud() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    pts.push(Vec3::new(i as f64, j as f64, k as f64) * 0.01);
                }
            }
        }
        PointCloud::new(pts)
    }

    /// Independent k-NN statistics by full sort, the oracle for the grid path.
    fn brute_mean_knn(points: &[Vec3], k: usize) -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (q - p).norm_squared())
                    .collect();
                d.sort_by(f64::total_cmp);
                d[..k].iter().map(|x| x.sqrt()).sum::<f64>() / k as f64
            })
            .collect()
    }

    #[test]
    fn uniform_grid_drops_only_boundary_stragglers() {
        // Corner and edge points of a bare grid sit above mean + 2 sd; the
        // oracle fixes exactly which ones.
        let cloud = grid_cloud();
        let stats = brute_mean_knn(&cloud.points, 20);
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        let sd = (stats.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / stats.len() as f64).sqrt();
        let expected: Vec<usize> = (0..stats.len()).filter(|&i| stats[i] <= mean + 2.0 * sd).collect();
        assert_eq!(expected.len(), 896);
        let out = denoise_statistical(&cloud, 20, 2.0).unwrap();
        assert_eq!(out, cloud.select(&expected));
    }

    #[test]
    fn far_point_is_removed() {
        let mut cloud = grid_cloud();
        cloud.points.push(Vec3::new(1.0, 0.05, 0.05));
        let out = denoise_statistical(&cloud, 20, 2.0).unwrap();
        assert_eq!(out.len(), 1000);
        assert_eq!(out.points, grid_cloud().points);
        let mut two = grid_cloud();
        two.points.push(Vec3::new(0.05, 1.0, 0.05));
        two.points.insert(0, Vec3::new(-1.0, 0.0, 0.0));
        let out = denoise_statistical(&two, 20, 2.0).unwrap();
        assert_eq!(out.points, grid_cloud().points);
    }

    proptest::proptest! {
        #[test]
        fn output_is_ordered_subset(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..120).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
            let cloud = PointCloud::new(pts);
            let out = denoise_statistical(&cloud, 20, 2.0).unwrap();
            let mut it = cloud.points.iter();
            for p in &out.points {
                proptest::prop_assert!(it.any(|q| q == p));
            }
        }
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Vec3::zeros(); 5]);
        assert!(matches!(denoise_statistical(&cloud, 20, 2.0), Err(GeometryError::InsufficientPoints { .. })));
    }

    #[test]
    fn merging_views() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.0, 0.0, 1.0)]);
        let same = merge_views(std::slice::from_ref(&cloud), &[RigidTransform::identity()]).unwrap();
        assert_eq!(same, cloud);
        let t = Vec3::new(0.1, 0.0, 0.0);
        let both = merge_views(&[cloud.clone(), cloud.clone()], &[RigidTransform::identity(), RigidTransform::from_translation(t)]).unwrap();
        assert_eq!(both.len(), 4);
        assert_eq!(both.points[2], cloud.points[0] + t);
        assert!(merge_views(&[], &[]).unwrap().is_empty());
        assert!(matches!(merge_views(&[cloud], &[]), Err(GeometryError::LengthMismatch(1, 0))));
    }
}
