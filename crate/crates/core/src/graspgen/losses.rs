use serde::{Deserialize, Serialize};

use super::{chamfer_op, GraspError, LatentDistribution, Result};
use crate::kinematics::{HandPose, POSE_DIM};
use crate::math::Vec3;
use crate::neural::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub kl: f64,
    pub recon: f64,
    pub cmap: f64,
    pub cd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { kl: 1e-3, recon: 1.0, cmap: 0.1, cd: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLosses {
    pub total: f64,
    pub kl: f64,
    pub recon: f64,
    pub cmap: f64,
    pub cd: f64,
}

/// `½ Σ (−log σ² − 1 + σ² + μ²)`.
pub fn kl_divergence(latent: &LatentDistribution) -> f64 {
    0.5 * latent.mu.iter().zip(&latent.sigma).map(|(m, s)| -(s * s).ln() - 1.0 + s * s + m * m).sum::<f64>()
}

pub(crate) struct LossVars {
    pub total: Var,
    pub kl: Var,
    pub recon: Var,
    pub cmap: Var,
    pub cd: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> PoseLosses {
        let v = |x: Var| g.value(x).item();
        PoseLosses { total: v(self.total), kl: v(self.kl), recon: v(self.recon), cmap: v(self.cmap), cd: v(self.cd) }
    }
}

pub(crate) struct LossInputs<'a> {
    /// `1 × 28` decoded pose.
    pub pose: Var,
    pub gt_pose: &'a HandPose,
    /// `n × 1` contact logits.
    pub logits: Var,
    pub gt_contact: &'a [bool],
    /// `m × 3` hand points of the decoded pose.
    pub hand: Var,
    pub gt_hand: &'a [Vec3],
    /// `1 × L` each; `σ = exp(log_sigma)`.
    pub mu: Var,
    pub log_sigma: Var,
}

pub(crate) fn loss_graph(g: &mut Graph, x: &LossInputs, w: &LossWeights) -> Result<LossVars> {
    // KL with log σ² = 2 log σ.
    let ls2 = g.scale(x.log_sigma, 2.0)?;
    let s2 = g.exp(ls2)?;
    let mu2 = g.square(x.mu)?;
    let a = g.sub(s2, ls2)?;
    let b = g.add(a, mu2)?;
    let per = g.sum(b)?;
    let dims = g.value(x.mu).cols() as f64;
    let kl_sum = g.scale(per, 0.5)?;
    let half_dims = g.input(Tensor::scalar(-0.5 * dims));
    let kl = g.add(kl_sum, half_dims)?;

    if g.value(x.pose).shape() != [1, POSE_DIM] {
        return Err(GraspError::Dim(format!("decoded pose has shape {:?}", g.value(x.pose).shape())));
    }
    let gt = g.input(Tensor::row(&x.gt_pose.to_array()));
    let diff = g.sub(x.pose, gt)?;
    let recon = g.norm(diff)?;

    let n = g.value(x.logits).rows();
    if g.value(x.logits).shape() != [x.gt_contact.len(), 1] {
        return Err(GraspError::Dim(format!("{n} contact logits for {} object points", x.gt_contact.len())));
    }
    let targets = Tensor::new(n, 1, x.gt_contact.iter().map(|&c| f64::from(u8::from(c))).collect())?;
    let bce = g.bce_with_logits(x.logits, &targets)?;
    let cmap = g.mean(bce)?;

    let cd = chamfer_op(g, x.hand, x.gt_hand)?;

    let mut total = None;
    for (v, wt) in [(kl, w.kl), (recon, w.recon), (cmap, w.cmap), (cd, w.cd)] {
        let term = g.scale(v, wt)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(LossVars { total: total.expect("four terms"), kl, recon, cmap, cd })
}

/// Evaluates the four training losses and their weighted sum on plain values.
/// `contact_logits` are pre-sigmoid scores aligned with `contact_gt`.
#[allow(clippy::too_many_arguments)]
pub fn pose_losses(
    reconstructed: &HandPose,
    ground_truth: &HandPose,
    contact_logits: &[f64],
    contact_gt: &[bool],
    hand_points: &[Vec3],
    gt_hand_points: &[Vec3],
    latent: &LatentDistribution,
    weights: &LossWeights,
) -> Result<PoseLosses> {
    if latent.mu.len() != latent.sigma.len() || latent.mu.is_empty() {
        return Err(GraspError::Dim(format!("latent μ has {} dims, σ has {}", latent.mu.len(), latent.sigma.len())));
    }
    if contact_logits.len() != contact_gt.len() || contact_logits.is_empty() {
        return Err(GraspError::Dim(format!("{} contact logits for {} labels", contact_logits.len(), contact_gt.len())));
    }
    let mut g = Graph::new();
    let pose = g.input(Tensor::row(&reconstructed.to_array()));
    let logits = g.input(Tensor::new(contact_logits.len(), 1, contact_logits.to_vec())?);
    let hand = g.input(Tensor::new(hand_points.len(), 3, hand_points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())?);
    let mu = g.input(Tensor::row(&latent.mu));
    let log_sigma = g.input(Tensor::row(&latent.sigma.iter().map(|s| s.ln()).collect::<Vec<_>>()));
    let inputs = LossInputs { pose, gt_pose: ground_truth, logits, gt_contact: contact_gt, hand, gt_hand: gt_hand_points, mu, log_sigma };
    let mut out = loss_graph(&mut g, &inputs, weights)?.values(&g);
    // The graph form rounds through exp(2 ln σ); report the closed form.
    out.kl = kl_divergence(latent);
    out.total = weights.kl * out.kl + weights.recon * out.recon + weights.cmap * out.cmap + weights.cd * out.cd;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn latent(mu: f64, sigma: f64) -> LatentDistribution {
        LatentDistribution { mu: vec![mu], sigma: vec![sigma] }
    }

    fn pts() -> Vec<Vec3> {
        vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.5, 0.0)]
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&latent(0.0, 1.0)), 0.0);
        assert_eq!(kl_divergence(&latent(1.0, 1.0)), 0.5);
    }

    #[test]
    fn perfect_reconstruction() {
        let mut pose = HandPose::default();
        pose.theta[3] = 0.4;
        pose.eta = [0.01, 0.0, 0.1, 0.2, 0.0, 0.0];
        let l = pose_losses(&pose, &pose, &[40.0, -40.0], &[true, false], &pts(), &pts(), &latent(0.0, 1.0), &LossWeights::default()).unwrap();
        assert_eq!(l.recon, 0.0);
        assert_eq!(l.cd, 0.0);
        assert_eq!(l.kl, 0.0);
        assert!(l.cmap < 1e-15);
    }

    #[test]
    fn weighted_sum_and_components() {
        let gt = HandPose::default();
        let mut p = gt;
        p.theta[0] = 0.3;
        p.eta[2] = 0.4;
        let w = LossWeights { kl: 0.5, recon: 2.0, cmap: 3.0, cd: 4.0 };
        let moved: Vec<Vec3> = pts().iter().map(|q| q + Vec3::new(0.1, 0.0, 0.0)).collect();
        let l = pose_losses(&p, &gt, &[0.0, 0.0], &[true, false], &moved, &pts(), &latent(1.0, 2.0), &w).unwrap();
        assert!((l.recon - 0.5).abs() < 1e-12);
        assert!((l.cmap - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.kl - 0.5 * (-(4.0f64).ln() - 1.0 + 4.0 + 1.0)).abs() < 1e-12);
        assert!((l.cd - 4.0 * 0.01).abs() < 1e-12);
        assert!((l.total - (0.5 * l.kl + 2.0 * l.recon + 3.0 * l.cmap + 4.0 * l.cd)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let p = HandPose::default();
        let w = LossWeights::default();
        assert!(pose_losses(&p, &p, &[0.0], &[true, false], &pts(), &pts(), &latent(0.0, 1.0), &w).is_err());
        let bad = LatentDistribution { mu: vec![0.0, 0.0], sigma: vec![1.0] };
        assert!(pose_losses(&p, &p, &[0.0], &[true], &pts(), &pts(), &bad, &w).is_err());
        assert!(pose_losses(&p, &p, &[0.0], &[true], &[], &pts(), &latent(0.0, 1.0), &w).is_err());
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let mut g = Graph::new();
        let mu = g.input(Tensor::row(&[0.3, -1.2]));
        let ls = g.input(Tensor::row(&[0.1, -0.4]));
        let pose = g.input(Tensor::row(&[0.0; POSE_DIM]));
        let logits = g.input(Tensor::new(1, 1, vec![0.0]).unwrap());
        let hand = g.input(Tensor::row(&[0.0, 0.0, 0.0]));
        let gt_pose = HandPose::default();
        let x = LossInputs { pose, gt_pose: &gt_pose, logits, gt_contact: &[true], hand, gt_hand: &[Vec3::zeros()], mu, log_sigma: ls };
        let v = loss_graph(&mut g, &x, &LossWeights::default()).unwrap().values(&g);
        let closed = kl_divergence(&LatentDistribution { mu: vec![0.3, -1.2], sigma: vec![0.1f64.exp(), (-0.4f64).exp()] });
        assert!((v.kl - closed).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_non_negative(mu in -5.0f64..5.0, log_sigma in -3.0f64..3.0) {
            let l = latent(mu, log_sigma.exp());
            let kl = kl_divergence(&l);
            prop_assert!(kl >= 0.0);
            if mu.abs() > 1e-3 || log_sigma.abs() > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
