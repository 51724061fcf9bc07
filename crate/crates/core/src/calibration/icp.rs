use serde::{Deserialize, Serialize};

use super::{CalibrationError, Result};
use crate::geometry::{PointCloud, PointGrid};
use crate::math::{Mat3, RigidTransform, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondences farther than this (m) are discarded.
    pub max_correspondence: f64,
    /// Stop once an update moves less than this (rotation rad + translation m).
    pub convergence: f64,
    /// Fraction of the worst correspondences rejected each iteration.
    pub trim: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_iterations: 50, max_correspondence: 0.05, convergence: 1e-6, trim: 0.1 }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.max_correspondence > 0.0) || !(self.convergence > 0.0) || !(0.0..1.0).contains(&self.trim) {
            return Err(CalibrationError::Params("ICP parameters must be positive with trim in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// RMS distance (m) over the kept correspondences at `transform`.
    pub rms: f64,
    pub iterations: usize,
    /// RMS before the first update and after every accepted update.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]`. Fails when the
/// cross-covariance has rank below 2 (collinear or coincident points).
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(CalibrationError::Degenerate("fewer than 3 correspondences".into()));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(CalibrationError::Degenerate("rank-deficient cross-covariance".into()));
    }
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut d = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    Ok(RigidTransform::new(r, cd - r * cs))
}

struct Matches {
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    rms: f64,
}

fn correspond(source: &[Vec3], grid: &PointGrid, t: &RigidTransform, params: &IcpParams) -> Result<Matches> {
    let max2 = params.max_correspondence * params.max_correspondence;
    let mut pairs: Vec<(f64, usize, usize)> = source
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let q = t.apply(p);
            grid.nearest(&q).filter(|(_, d2)| *d2 <= max2).map(|(j, d2)| (d2, i, j))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = ((1.0 - params.trim) * pairs.len() as f64).ceil() as usize;
    pairs.truncate(keep.max(3.min(pairs.len())));
    if pairs.len() < 3 {
        return Err(CalibrationError::Degenerate("fewer than 3 correspondences within range".into()));
    }
    let rms = (pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64).sqrt();
    let pts = grid.points();
    Ok(Matches { src: pairs.iter().map(|p| t.apply(&source[p.1])).collect(), dst: pairs.iter().map(|p| pts[p.2]).collect(), rms })
}

/// Point-to-point ICP aligning `source` onto `target` starting from `init`.
/// An update that would raise the residual is rejected and ends the run, so
/// `residuals` is non-increasing.
pub fn icp_rigid(source: &PointCloud, target: &PointCloud, init: &RigidTransform, params: &IcpParams) -> Result<IcpResult> {
    params.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(CalibrationError::Degenerate(format!("need at least 3 points, got {} and {}", source.len(), target.len())));
    }
    let grid = PointGrid::new(&target.points);
    let mut t = *init;
    let mut m = correspond(&source.points, &grid, &t, params)?;
    let mut residuals = vec![m.rms];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        iterations += 1;
        let delta = kabsch(&m.src, &m.dst)?;
        let cand = delta.compose(&t);
        let next = correspond(&source.points, &grid, &cand, params)?;
        if next.rms > m.rms {
            break;
        }
        t = cand;
        m = next;
        residuals.push(m.rms);
        let (angle, shift) = delta.distance_to(&RigidTransform::identity());
        if angle + shift < params.convergence {
            converged = true;
            break;
        }
    }
    let rotation = crate::math::project_to_rotation(&t.rotation);
    Ok(IcpResult { transform: RigidTransform::new(rotation, t.translation), rms: m.rms, iterations, residuals, converged })
}
