use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GraspError, PointEncoder, PoseGenConfig, Result};
use crate::geometry::PointCloud;
use crate::kinematics::{clamp_to_limits, forward_kinematics, HandPose, HandSurfaceSampler, KinematicModel, POSE_DIM};
use crate::math::Vec3;
use crate::neural::{read_checkpoint, write_checkpoint, Activation, Graph, Network, NetworkSpec, ParamStore, Tensor, Var};

/// Diagonal Gaussian over the latent code; `sigma` is a standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Encoder output for one object cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEncoding {
    /// `1 × F` pooled feature.
    pub pooled: Tensor,
    /// `n × F`, one row per input point.
    pub per_point: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Decoder output before joint limits are applied.
    pub raw: HandPose,
    /// `raw` with θ clamped to the model limits.
    pub pose: HandPose,
    pub contact_logits: Vec<f64>,
}

/// All parameters of the grasp generator and the hand it generates for.
///
/// `encoder_widths` size the two point-set encoders; `decoder_widths` size the
/// hidden layers of both the posterior head and the pose decoder.
#[derive(Debug, Clone)]
pub struct PoseGenModel {
    pub config: PoseGenConfig,
    pub store: ParamStore,
    pub object_encoder: PointEncoder,
    pub hand_encoder: PointEncoder,
    /// `[Fʰ, Fᵒ] → [μ, log σ]`.
    pub posterior: Network,
    /// `[z, Fᵒ] → φ`.
    pub decoder: Network,
    /// `[per-point feature, z, Fᵒ] → contact logit`.
    pub contact_head: Network,
    hand: Arc<KinematicModel>,
    sampler: Arc<HandSurfaceSampler>,
}

fn widths(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut w = vec![first];
    w.extend_from_slice(hidden);
    w.push(last);
    w
}

impl PoseGenModel {
    pub fn new(config: &PoseGenConfig, hand: &KinematicModel) -> Result<Self> {
        config.validate()?;
        let c = config;
        let s = c.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut store = ParamStore::new();
        let object_encoder = PointEncoder::new(&mut store, "object", &c.encoder_widths, c.point_count, c.input_scale, s ^ 1)?;
        let hand_encoder = PointEncoder::new(&mut store, "hand", &c.encoder_widths, c.point_count, c.input_scale, s ^ 2)?;
        let f = object_encoder.output();
        let l = c.latent_dim;
        let posterior = Network::new(&NetworkSpec::mlp(&widths(2 * f, &c.decoder_widths, 2 * l), Activation::Identity, s ^ 3), &mut store, "posterior")?;
        let decoder = Network::new(&NetworkSpec::mlp(&widths(l + f, &c.decoder_widths, POSE_DIM), Activation::Identity, s ^ 4), &mut store, "decoder")?;
        let contact_head =
            Network::new(&NetworkSpec::mlp(&widths(2 * f + l, &c.contact_widths, 1), Activation::Identity, s ^ 5), &mut store, "contact")?;
        let sampler = HandSurfaceSampler::new(hand, c.hand_points, c.seed)?;
        Ok(Self {
            config: config.clone(),
            store,
            object_encoder,
            hand_encoder,
            posterior,
            decoder,
            contact_head,
            hand: Arc::new(hand.clone()),
            sampler: Arc::new(sampler),
        })
    }

    pub fn hand(&self) -> &Arc<KinematicModel> {
        &self.hand
    }

    pub fn sampler(&self) -> &Arc<HandSurfaceSampler> {
        &self.sampler
    }

    pub fn feature_dim(&self) -> usize {
        self.object_encoder.output()
    }

    /// Hand surface samples of `pose` as used by the encoder and losses.
    pub fn hand_points(&self, pose: &HandPose) -> Vec<Vec3> {
        self.sampler.points(&forward_kinematics(&self.hand, pose))
    }

    pub(crate) fn posterior_graph(&self, g: &mut Graph, hand_pooled: Var, object_pooled: Var) -> Result<(Var, Var)> {
        let x = g.concat_cols(&[hand_pooled, object_pooled])?;
        let out = self.posterior.forward(g, &self.store, x, None)?;
        let l = self.config.latent_dim;
        Ok((g.slice_cols(out, 0, l)?, g.slice_cols(out, l, l)?))
    }

    /// Decoded `1 × 28` pose and `n × 1` contact logits.
    pub(crate) fn decode_graph(&self, g: &mut Graph, z: Var, object_pooled: Var, per_point: Var) -> Result<(Var, Var)> {
        let zc = g.concat_cols(&[z, object_pooled])?;
        let pose = self.decoder.forward(g, &self.store, zc, None)?;
        let n = g.value(per_point).rows();
        let rep = g.repeat_rows(zc, n)?;
        let ci = g.concat_cols(&[per_point, rep])?;
        let logits = self.contact_head.forward(g, &self.store, ci, None)?;
        Ok((pose, logits))
    }

    /// Writes the parameters; the header binds them to `config`.
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        Ok(write_checkpoint(w, &self.config, &self.store)?)
    }

    pub fn load<R: Read>(r: R, config: &PoseGenConfig, hand: &KinematicModel) -> Result<Self> {
        let mut m = Self::new(config, hand)?;
        read_checkpoint(r, config, &mut m.store)?;
        Ok(m)
    }
}

pub fn encode_object(model: &PoseGenModel, cloud: &PointCloud) -> Result<ObjectEncoding> {
    let mut g = Graph::new();
    let (h, pooled) = model.object_encoder.forward(&mut g, &model.store, &cloud.points)?;
    Ok(ObjectEncoding { pooled: g.value(pooled).clone(), per_point: g.value(h).clone() })
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(GraspError::Dim(format!("{what} has {got} values, expected {want}")));
    }
    Ok(())
}

/// Posterior `q(z | Fʰ, Fᵒ)`; `σ = exp(log σ)`.
pub fn cvae_encode(model: &PoseGenModel, hand_feature: &[f64], object_feature: &[f64]) -> Result<LatentDistribution> {
    let f = model.feature_dim();
    check_dim("hand feature", hand_feature.len(), f)?;
    check_dim("object feature", object_feature.len(), f)?;
    let mut g = Graph::new();
    let h = g.input(Tensor::row(hand_feature));
    let o = g.input(Tensor::row(object_feature));
    let (mu, ls) = model.posterior_graph(&mut g, h, o)?;
    Ok(LatentDistribution { mu: g.value(mu).data().to_vec(), sigma: g.value(ls).data().iter().map(|v| v.exp()).collect() })
}

pub fn cvae_decode(model: &PoseGenModel, z: &[f64], object: &ObjectEncoding) -> Result<Decoded> {
    check_dim("latent code", z.len(), model.config.latent_dim)?;
    check_dim("object feature", object.pooled.len(), model.feature_dim())?;
    check_dim("per-point feature", object.per_point.cols(), model.feature_dim())?;
    let mut g = Graph::new();
    let zv = g.input(Tensor::row(z));
    let pv = g.input(object.pooled.clone());
    let pp = g.input(object.per_point.clone());
    let (pose, logits) = model.decode_graph(&mut g, zv, pv, pp)?;
    let raw = HandPose::from_slice(g.value(pose).data())?;
    let mut clamped = raw;
    clamped.theta = clamp_to_limits(&model.hand, &raw.theta);
    Ok(Decoded { raw, pose: clamped, contact_logits: g.value(logits).data().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::toy_hand;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config() -> PoseGenConfig {
        PoseGenConfig {
            latent_dim: 4,
            point_count: 64,
            hand_points: 64,
            encoder_widths: vec![16, 16],
            decoder_widths: vec![32],
            contact_widths: vec![8],
            ..PoseGenConfig::default()
        }
    }

    fn cloud(n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        PointCloud::new((0..n).map(|_| Vec3::new(rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04))).collect())
    }

    #[test]
    fn zero_parameters_give_standard_normal() {
        let mut m = PoseGenModel::new(&small_config(), &toy_hand()).unwrap();
        m.store.zero();
        let f = vec![0.3; m.feature_dim()];
        let lat = cvae_encode(&m, &f, &f).unwrap();
        assert_eq!(lat.mu, vec![0.0; 4]);
        assert_eq!(lat.sigma, vec![1.0; 4]);
    }

    #[test]
    fn posterior_is_positive_and_deterministic() {
        let m = PoseGenModel::new(&small_config(), &toy_hand()).unwrap();
        let obj = encode_object(&m, &cloud(100)).unwrap();
        let hand = m.hand_encoder.encode(&m.store, &m.hand_points(&HandPose::default())).unwrap();
        let a = cvae_encode(&m, hand.data(), obj.pooled.data()).unwrap();
        let b = cvae_encode(&m, hand.data(), obj.pooled.data()).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma.iter().all(|&s| s > 0.0));
        assert!(cvae_encode(&m, &[0.0; 3], obj.pooled.data()).is_err());
    }

    #[test]
    fn decode_contract() {
        let m = PoseGenModel::new(&small_config(), &toy_hand()).unwrap();
        let obj = encode_object(&m, &cloud(90)).unwrap();
        let z = [2.0, -1.0, 0.5, 3.0];
        let a = cvae_decode(&m, &z, &obj).unwrap();
        let b = cvae_decode(&m, &z, &obj).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.contact_logits.len(), 90);
        for j in 0..22 {
            let (lo, hi) = m.hand().limits(j);
            assert!(a.pose.theta[j] >= lo && a.pose.theta[j] <= hi);
        }
        assert_eq!(a.pose.eta, a.raw.eta);
        assert!(cvae_decode(&m, &z[..3], &obj).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = small_config();
        let m = PoseGenModel::new(&c, &toy_hand()).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = PoseGenModel::load(buf.as_slice(), &c, &toy_hand()).unwrap();
        assert_eq!(back.store, m.store);
        let other = PoseGenConfig { latent_dim: 5, ..c };
        assert!(PoseGenModel::load(buf.as_slice(), &other, &toy_hand()).is_err());
    }
}
