use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{loss_graph, LossInputs};
use super::{
    cvae_decode, encode_object, farthest_point_indices, hand_points_op, ContactSource, GraspCandidate, GraspError, PoseGenConfig, PoseGenModel, Result,
};
use crate::geometry::{contact_map, ContactMap, PointCloud};
use crate::kinematics::{HandPose, KinematicModel};
use crate::math::Vec3;
use crate::neural::{adam_step, Graph, OptimizerState, Tensor};

/// One `(object cloud, ground-truth grasp)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspSample {
    pub object: PointCloud,
    pub pose: HandPose,
}

/// Per-epoch means of the loss components over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub total: f64,
    pub kl: f64,
    pub recon: f64,
    pub cmap: f64,
    pub cd: f64,
}

struct Prepared {
    cloud: Vec<Vec3>,
    pose: HandPose,
    hand: Vec<Vec3>,
    contact: Vec<bool>,
}

fn prepare(model: &PoseGenModel, s: &GraspSample) -> Result<Prepared> {
    let cloud = s.object.select(&farthest_point_indices(&s.object.points, model.config.point_count));
    let hand = model.hand_points(&s.pose);
    let contact = contact_map(&cloud, &hand, model.config.contact_threshold_m)?.flags;
    Ok(Prepared { cloud: cloud.points, pose: s.pose, hand, contact })
}

/// Fits a fresh model to `dataset` with Adam, single-threaded and
/// deterministic for a given `config.seed`.
///
/// Ground-truth contact maps are thresholded distances from the ground-truth
/// hand surface to the resampled object cloud.
pub fn train_posegen(dataset: &[GraspSample], config: &PoseGenConfig, hand: &KinematicModel) -> Result<(PoseGenModel, Vec<EpochLosses>)> {
    if dataset.is_empty() {
        return Err(GraspError::EmptyDataset);
    }
    let mut model = PoseGenModel::new(config, hand)?;
    let data = dataset.iter().map(|s| prepare(&model, s)).collect::<Result<Vec<_>>>()?;
    let mut opt = OptimizerState::new(config.learning_rate, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let l = config.latent_dim;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 5];
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let d = &data[i];
                let eps: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut g = Graph::new();
                let (per_point, obj) = model.object_encoder.forward(&mut g, &model.store, &d.cloud)?;
                let (_, hand_feat) = model.hand_encoder.forward(&mut g, &model.store, &d.hand)?;
                let (mu, log_sigma) = model.posterior_graph(&mut g, hand_feat, obj)?;
                let sigma = g.exp(log_sigma)?;
                let ev = g.input(Tensor::row(&eps));
                let noise = g.mul(sigma, ev)?;
                let z = g.add(mu, noise)?;
                let (pose, logits) = model.decode_graph(&mut g, z, obj, per_point)?;
                let hand_pred = hand_points_op(&mut g, pose, model.hand(), model.sampler())?;
                let inputs = LossInputs { pose, gt_pose: &d.pose, logits, gt_contact: &d.contact, hand: hand_pred, gt_hand: &d.hand, mu, log_sigma };
                let vars = loss_graph(&mut g, &inputs, &config.weights)?;
                let v = vars.values(&g);
                for (s, x) in sums.iter_mut().zip([v.total, v.kl, v.recon, v.cmap, v.cd]) {
                    *s += x;
                }
                g.backward(vars.total)?;
                let grads = g.param_grads(&model.store)?;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = acc.expect("non-empty batch").iter().map(|t| t.scaled(scale)).collect();
            adam_step(&mut opt, &mut model.store, &grads)?;
        }
        let n = data.len() as f64;
        curve.push(EpochLosses { epoch, total: sums[0] / n, kl: sums[1] / n, recon: sums[2] / n, cmap: sums[3] / n, cd: sums[4] / n });
        log::debug!("posegen epoch {epoch}: total {:.6}", sums[0] / n);
    }
    Ok((model, curve))
}

/// Decodes `n` grasps from `z ~ N(0, I)` against `object_cloud`. Codes are
/// drawn sequentially from `seed`; decoding runs in parallel.
pub fn sample_candidates(model: &PoseGenModel, object_cloud: &PointCloud, n: usize, seed: u64) -> Result<Vec<GraspCandidate>> {
    let enc = encode_object(model, object_cloud)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<Vec<f64>> = (0..n).map(|_| (0..model.config.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    codes
        .par_iter()
        .enumerate()
        .map(|(id, z)| {
            let d = cvae_decode(model, z, &enc)?;
            let contact = match model.config.contact_source {
                ContactSource::Predicted => {
                    ContactMap { flags: d.contact_logits.iter().map(|&x| x > 0.0).collect(), threshold_m: model.config.contact_threshold_m }
                }
                ContactSource::Recomputed => contact_map(object_cloud, &model.hand_points(&d.pose), model.config.contact_threshold_m)?,
            };
            Ok(GraspCandidate { id, pose: d.pose, contact, metrics: None, score: None })
        })
        .collect()
}
