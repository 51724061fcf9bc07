use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CalibrationError, Result};
use crate::geometry::{PointCloud, PointGrid, TriangleMesh};

/// Above this RMS cloud-to-robot distance (m) a recovered offset is suspect.
pub const SYNC_WARNING_RMS: f64 = 0.005;

/// Strictly increasing timestamps (s) with payload ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedStream {
    entries: Vec<(f64, u64)>,
}

impl TimedStream {
    pub fn new(entries: Vec<(f64, u64)>) -> Result<Self> {
        if let Some(k) = entries.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(CalibrationError::Params(format!("timestamps not strictly increasing at entry {}", k + 1)));
        }
        if entries.iter().any(|e| !e.0.is_finite()) {
            return Err(CalibrationError::Params("non-finite timestamp".into()));
        }
        Ok(Self { entries })
    }

    /// Uniformly spaced frames with ids 0, 1, ...
    pub fn uniform(start: f64, period: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| (start + period * i as f64, i as u64)).collect())
    }

    pub fn entries(&self) -> &[(f64, u64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncResult {
    /// Best robot timestamp minus camera timestamp (s).
    pub offset: f64,
    pub robot_timestamp: f64,
    /// RMS nearest distance from cloud points to robot samples at the best frame (m).
    pub rms: f64,
    /// Set when `rms` exceeds [`SYNC_WARNING_RMS`].
    pub warning: bool,
}

/// Finds the robot frame within `camera_timestamp ± window_s` whose posed
/// mesh best explains the camera cloud, by one-sided Chamfer distance from
/// the cloud to `samples` area-weighted mesh points. Ties go to the earliest frame.
pub fn sync_offset(
    robot_mesh_at: impl Fn(f64) -> TriangleMesh,
    robot_timestamps: &TimedStream,
    camera_cloud: &PointCloud,
    camera_timestamp: f64,
    window_s: f64,
    samples: usize,
) -> Result<SyncResult> {
    if camera_cloud.is_empty() || samples == 0 {
        return Err(CalibrationError::Params("empty cloud or zero samples".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &(ts, _) in robot_timestamps.entries() {
        if (ts - camera_timestamp).abs() > window_s {
            continue;
        }
        let mesh = robot_mesh_at(ts);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<_> = mesh.sample_surface(samples, &mut rng).iter().map(|s| mesh.point_at(s)).collect();
        let grid = PointGrid::new(&pts);
        let sum: f64 = camera_cloud.points.iter().map(|p| grid.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2)).sum();
        if best.is_none_or(|(_, b)| sum < b) {
            best = Some((ts, sum));
        }
    }
    let (ts, sum) = best.ok_or(CalibrationError::EmptyWindow { center: camera_timestamp, window: window_s })?;
    let rms = (sum / camera_cloud.len() as f64).sqrt();
    Ok(SyncResult { offset: ts - camera_timestamp, robot_timestamp: ts, rms, warning: rms > SYNC_WARNING_RMS })
}

/// Checks that, frame by frame, camera `k + 1` fires `stagger_s` after camera `k` (± `tol_s`).
pub fn validate_stagger(camera_timestamps: &[Vec<f64>], stagger_s: f64, tol_s: f64) -> Result<()> {
    for (k, pair) in camera_timestamps.windows(2).enumerate() {
        for (frame, (a, b)) in pair[0].iter().zip(&pair[1]).enumerate() {
            if ((b - a) - stagger_s).abs() > tol_s {
                return Err(CalibrationError::Params(format!(
                    "camera {} frame {frame}: stagger {:.6} s, expected {stagger_s:.6} s",
                    k + 1,
                    b - a
                )));
            }
        }
    }
    Ok(())
}
