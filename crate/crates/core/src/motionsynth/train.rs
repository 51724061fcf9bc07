use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::phase_from_input;
use super::{MotionConfig, MotionError, MotionNet, MotionSequence, MotionState, Result, HISTORY, HORIZON, MIN_TRAIN_FRAMES};
use crate::graspgen::hand_points_op;
use crate::kinematics::{forward_kinematics, HandPose, KinematicModel, POSE_DIM};
use crate::math::Vec3;
use crate::neural::{adam_step, Graph, OptimizerState, Tensor, Var};

/// Loss terms averaged over the ten predicted steps. `total` is weighted;
/// the components are not.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionLoss {
    pub total: f64,
    /// Mean absolute pose error.
    pub pose: f64,
    /// RMS hand point error (m).
    pub points: f64,
    /// RMS displacement-field error (m).
    pub displacement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCurve {
    pub iteration: usize,
    /// Mean over the iteration's batch.
    pub loss: MotionLoss,
}

/// A training sequence with hand points of every frame.
struct Prepared {
    poses: Vec<HandPose>,
    points: Vec<Vec<Vec3>>,
    period: f64,
}

impl Prepared {
    fn new(net: &MotionNet, s: &MotionSequence) -> Self {
        let points = s.poses.iter().map(|p| net.sampler().points(&forward_kinematics(net.hand(), p))).collect();
        Self { poses: s.poses.clone(), points, period: s.frame_period_s }
    }

    fn len(&self) -> usize {
        self.poses.len()
    }

    fn target_points(&self) -> &[Vec3] {
        self.points.last().expect("non-empty")
    }

    fn progress(&self, t: usize) -> f64 {
        t as f64 / (self.len() - 1).max(1) as f64
    }

    /// State at frame `t`; the target is the last frame. With noise, θ of every
    /// history pose and both stored point frames are perturbed independently,
    /// and velocities are differenced from the perturbed points.
    fn state<R: Rng>(&self, hand: &KinematicModel, t: usize, noise: Option<(&mut R, f64, f64)>) -> Result<MotionState> {
        let mut hist: Vec<HandPose> = (0..HISTORY).map(|i| self.poses[(t + i).saturating_sub(HISTORY - 1)]).collect();
        let mut cur = self.points[t].clone();
        let mut prev = self.points[t.saturating_sub(1)].clone();
        if let Some((rng, st, sp)) = noise {
            if st > 0.0 {
                let n = Normal::new(0.0, st).expect("positive std");
                for p in &mut hist {
                    for v in &mut p.theta {
                        *v += n.sample(rng);
                    }
                }
            }
            if sp > 0.0 {
                let n = Normal::new(0.0, sp).expect("positive std");
                for q in cur.iter_mut().chain(prev.iter_mut()) {
                    *q += Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
                }
            }
        }
        MotionState::from_parts(hand, hist, cur, &prev, self.target_points().to_vec(), self.period)
    }
}

fn rows(v: &[Vec3]) -> Tensor {
    Tensor::new(v.len(), 3, v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()).expect("sized")
}

struct LossVars {
    total: Var,
    pose: Var,
    points: Var,
    displacement: Var,
}

/// Loss of one window on the graph. Predictions are `φ_t + Δφ_k` with `φ_t`
/// the (possibly noisy) current input pose; ground truth holds the last
/// frame past the end of the sequence.
fn window_loss(net: &MotionNet, g: &mut Graph, seq: &Prepared, t: usize, state: &MotionState) -> Result<LossVars> {
    let w = net.config.weights;
    let x = net.assemble_graph(g, state)?;
    let gate = g.input(Tensor::row(&phase_from_input(&net.layout(), g.value(x).data(), seq.progress(t))));
    let out = net.delta_graph(g, x, gate)?;
    let base = g.input(Tensor::row(&state.poses[HISTORY - 1].to_array()));
    let target = g.input(rows(seq.target_points()));
    let inv_sqrt_m = 1.0 / (net.config.hand_points as f64).sqrt();
    let (mut lp, mut lh, mut ld) = (Vec::new(), Vec::new(), Vec::new());
    for k in 1..=HORIZON {
        let gi = (t + k).min(seq.len() - 1);
        let d = g.slice_cols(out, (k - 1) * POSE_DIM, POSE_DIM)?;
        let pred = g.add(d, base)?;
        let gt = g.input(Tensor::row(&seq.poses[gi].to_array()));
        let e = g.sub(pred, gt)?;
        let e = g.abs(e)?;
        lp.push(g.mean(e)?);

        let hp = hand_points_op(g, pred, net.hand(), net.sampler())?;
        let gt_pts = g.input(rows(&seq.points[gi]));
        let e = g.sub(hp, gt_pts)?;
        let n = g.norm(e)?;
        lh.push(g.scale(n, inv_sqrt_m)?);

        let d_pred = g.sub(target, hp)?;
        let d_gt = g.sub(target, gt_pts)?;
        let e = g.sub(d_pred, d_gt)?;
        let n = g.norm(e)?;
        ld.push(g.scale(n, inv_sqrt_m)?);
    }
    let mut avg = |v: &[Var]| -> Result<Var> {
        let c = g.concat_cols(v)?;
        Ok(g.mean(c)?)
    };
    let (pose, points, displacement) = (avg(&lp)?, avg(&lh)?, avg(&ld)?);
    let a = g.scale(pose, w.pose)?;
    let b = g.scale(points, w.points)?;
    let c = g.scale(displacement, w.displacement)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossVars { total, pose, points, displacement })
}

fn loss_values(g: &Graph, v: &LossVars) -> MotionLoss {
    MotionLoss {
        total: g.value(v.total).item(),
        pose: g.value(v.pose).item(),
        points: g.value(v.points).item(),
        displacement: g.value(v.displacement).item(),
    }
}

fn check_sequences(sequences: &[MotionSequence]) -> Result<()> {
    if sequences.is_empty() {
        return Err(MotionError::Sequence("no training sequences".into()));
    }
    for (index, s) in sequences.iter().enumerate() {
        s.validate()?;
        if s.len() < MIN_TRAIN_FRAMES {
            return Err(MotionError::TooShort { index, have: s.len(), need: MIN_TRAIN_FRAMES });
        }
    }
    Ok(())
}

/// Trains a fresh network. Each iteration draws `batch_size` random windows,
/// averages their gradients and takes one Adam step. Windows are evaluated in
/// parallel but reduced in draw order, so results depend only on the seed.
///
/// Every sequence targets its own last frame.
pub fn train_motion(sequences: &[MotionSequence], config: &MotionConfig, hand: &KinematicModel) -> Result<(MotionNet, Vec<MotionCurve>)> {
    check_sequences(sequences)?;
    let mut net = MotionNet::new(config, hand)?;
    let data: Vec<Prepared> = sequences.iter().map(|s| Prepared::new(&net, s)).collect();
    let mut opt = OptimizerState::new(config.learning_rate, &net.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_7469_6f6e);
    let mut curves = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let s = rng.random_range(0..data.len());
            let t = rng.random_range(0..data[s].len());
            let noise = Some((&mut rng, config.noise_theta_rad, config.noise_points_m));
            batch.push((s, t, data[s].state(hand, t, noise)?));
        }
        let results = batch
            .par_iter()
            .map(|(s, t, state)| {
                let mut g = Graph::new();
                let v = window_loss(&net, &mut g, &data[*s], *t, state)?;
                g.backward(v.total)?;
                Ok((loss_values(&g, &v), g.param_grads(&net.store)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / results.len() as f64;
        let mut grads: Option<Vec<Tensor>> = None;
        let mut mean = MotionLoss::default();
        for (l, gr) in results {
            mean.total += l.total * inv;
            mean.pose += l.pose * inv;
            mean.points += l.points * inv;
            mean.displacement += l.displacement * inv;
            match &mut grads {
                None => grads = Some(gr.into_iter().map(|t| t.scaled(inv)).collect()),
                Some(acc) => acc.iter_mut().zip(&gr).for_each(|(a, b)| a.add_assign(&b.scaled(inv))),
            }
        }
        adam_step(&mut opt, &mut net.store, &grads.expect("non-empty batch"))?;
        curves.push(MotionCurve { iteration, loss: mean });
    }
    Ok((net, curves))
}

/// Mean noise-free loss over every window of every sequence.
pub fn evaluate_motion_loss(net: &MotionNet, sequences: &[MotionSequence]) -> Result<MotionLoss> {
    sequences.iter().try_for_each(MotionSequence::validate)?;
    let data: Vec<Prepared> = sequences.iter().map(|s| Prepared::new(net, s)).collect();
    let windows: Vec<(usize, usize)> = data.iter().enumerate().flat_map(|(s, d)| (0..d.len()).map(move |t| (s, t))).collect();
    let losses = windows
        .par_iter()
        .map(|&(s, t)| {
            let state = data[s].state::<ChaCha8Rng>(net.hand(), t, None)?;
            let mut g = Graph::new();
            let v = window_loss(net, &mut g, &data[s], t, &state)?;
            Ok(loss_values(&g, &v))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / losses.len() as f64;
    Ok(losses.iter().fold(MotionLoss::default(), |a, l| MotionLoss {
        total: a.total + l.total * inv,
        pose: a.pose + l.pose * inv,
        points: a.points + l.points * inv,
        displacement: a.displacement + l.displacement * inv,
    }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::super::net::tests::small_config;
    use super::*;
    use crate::kinematics::toy_hand;

    /// Straight line in pose space from the mean pose to `target` over `frames`.
    pub(crate) fn line(target: &HandPose, frames: usize, period: f64) -> MotionSequence {
        let a = HandPose::default().to_array();
        let b = target.to_array();
        let poses = (0..frames)
            .map(|i| {
                let s = i as f64 / (frames - 1) as f64;
                let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * (y - x)).collect();
                HandPose::from_slice(&v).unwrap()
            })
            .collect();
        MotionSequence::new(poses, period).unwrap()
    }

    fn target() -> HandPose {
        let mut p = HandPose::mean_pose(Vec3::new(0.04, 0.03, -0.02));
        p.theta[4] = 0.4;
        p.theta[8] = 0.3;
        p
    }

    #[test]
    fn rejects_short_or_empty_data() {
        let c = small_config();
        assert!(matches!(train_motion(&[line(&target(), 15, 0.1)], &c, &toy_hand()), Err(MotionError::TooShort { index: 0, have: 15, need: 16 })));
        assert!(train_motion(&[], &c, &toy_hand()).is_err());
    }

    #[test]
    fn zero_weights_give_zero_loss_and_frozen_params() {
        let c = MotionConfig {
            weights: super::super::MotionLossWeights { pose: 0.0, points: 0.0, displacement: 0.0 },
            iterations: 3,
            batch_size: 2,
            ..small_config()
        };
        let (net, curves) = train_motion(&[line(&target(), 16, 0.1)], &c, &toy_hand()).unwrap();
        assert!(curves.iter().all(|c| c.loss.total == 0.0));
        assert_eq!(net.store, MotionNet::new(&c, &toy_hand()).unwrap().store);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // A constant sequence with a zeroed network predicts the ground truth exactly.
        let mut net = MotionNet::new(&small_config(), &toy_hand()).unwrap();
        net.zero_output();
        let p = target();
        let seq = MotionSequence::new(vec![p; 16], 0.1).unwrap();
        let l = evaluate_motion_loss(&net, &[seq]).unwrap();
        assert_eq!(l, MotionLoss::default());
    }

    #[test]
    fn deterministic_per_seed() {
        let c = MotionConfig { iterations: 4, batch_size: 3, ..small_config() };
        let data = [line(&target(), 16, 0.1)];
        let (a, ca) = train_motion(&data, &c, &toy_hand()).unwrap();
        let (b, cb) = train_motion(&data, &c, &toy_hand()).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(ca, cb);
    }

    #[test]
    fn overfits_one_sequence() {
        let c = MotionConfig { noise_theta_rad: 0.0, noise_points_m: 0.0, iterations: 2000, batch_size: 4, learning_rate: 1e-3, ..small_config() };
        let data = [line(&target(), 20, 1.0 / 15.0)];
        let before = evaluate_motion_loss(&MotionNet::new(&c, &toy_hand()).unwrap(), &data).unwrap();
        let (net, _) = train_motion(&data, &c, &toy_hand()).unwrap();
        let after = evaluate_motion_loss(&net, &data).unwrap();
        assert!(after.total <= 0.1 * before.total, "{} -> {}", before.total, after.total);
    }
}
