use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InputLayout, MotionConfig, MotionError, Result, HORIZON};
use crate::graspgen::PointEncoder;
use crate::kinematics::{HandPose, HandSurfaceSampler, KinematicModel, POSE_DIM};
use crate::neural::{
    read_checkpoint, write_checkpoint, Activation, Dense, DenseSpec, GatedSpec, Graph, LayerSpec, Network, NetworkSpec, ParamStore, SelfAttention, Tensor, Var,
};

/// `Δφ_{t+1..t+10}` relative to frame `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    pub steps: Vec<[f64; POSE_DIM]>,
}

impl PoseDelta {
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != HORIZON * POSE_DIM || v.iter().any(|x| !x.is_finite()) {
            return Err(MotionError::Shape(format!("pose delta needs {} finite values, got {}", HORIZON * POSE_DIM, v.len())));
        }
        Ok(Self { steps: v.chunks_exact(POSE_DIM).map(|c| c.try_into().expect("chunk")).collect() })
    }

    /// `current + Δφ_k` for step `k ∈ 1..=10`, without clamping.
    pub fn apply(&self, current: &HandPose, k: usize) -> HandPose {
        let mut a = current.to_array();
        for (x, d) in a.iter_mut().zip(&self.steps[k - 1]) {
            *x += d;
        }
        HandPose::from_slice(&a).expect("sized")
    }
}

/// All motion-synthesis parameters plus the hand they were built for.
#[derive(Debug, Clone)]
pub struct MotionNet {
    pub config: MotionConfig,
    pub store: ParamStore,
    pub joint_attention: SelfAttention,
    pub target_encoder: PointEncoder,
    pub trunk: Dense,
    /// Gated experts producing the `1 × 280` pose changes.
    pub head: Network,
    /// Per-element multiplier applied to the flat input ahead of the trunk.
    input_scale: Tensor,
    hand: Arc<KinematicModel>,
    sampler: Arc<HandSurfaceSampler>,
}

impl MotionNet {
    pub fn new(config: &MotionConfig, hand: &KinematicModel) -> Result<Self> {
        config.validate()?;
        let c = config;
        let s = c.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 11);
        let joint_attention = SelfAttention::new(&mut store, "joint_attn", 6 * c.pe_frequencies, c.joint_dim, true, &mut rng)?;
        let target_encoder = PointEncoder::new(&mut store, "target", &c.target_widths, c.hand_points, c.point_scale, s ^ 12)?;
        let layout = InputLayout { joint_dim: c.joint_dim, hand_points: c.hand_points, target_dim: target_encoder.output() };
        let trunk = Dense::new(&mut store, "trunk", layout.len(), c.trunk_width, Activation::Elu, &mut rng);
        let mut layers: Vec<DenseSpec> = c.expert_widths.iter().map(|&w| DenseSpec { output: w, activation: Activation::Elu }).collect();
        layers.push(DenseSpec { output: HORIZON * POSE_DIM, activation: Activation::Identity });
        let spec = NetworkSpec {
            layers: vec![LayerSpec::Gated(GatedSpec { input: c.trunk_width, gate_input: 3, gate_hidden: c.gate_hidden.clone(), experts: c.experts, layers })],
            seed: s ^ 13,
        };
        let head = Network::new(&spec, &mut store, "head")?;

        let mut scale = vec![1.0; layout.len()];
        let seg = layout.segments();
        for (i, k) in [(2, c.point_scale), (3, c.velocity_scale), (5, c.point_scale)] {
            scale[seg[i].0..seg[i].0 + seg[i].1].fill(k);
        }
        let sampler = HandSurfaceSampler::new(hand, c.hand_points, c.seed)?;
        Ok(Self {
            config: config.clone(),
            store,
            joint_attention,
            target_encoder,
            trunk,
            head,
            input_scale: Tensor::row(&scale),
            hand: Arc::new(hand.clone()),
            sampler: Arc::new(sampler),
        })
    }

    pub fn layout(&self) -> InputLayout {
        InputLayout { joint_dim: self.config.joint_dim, hand_points: self.config.hand_points, target_dim: self.target_encoder.output() }
    }

    pub fn hand(&self) -> &Arc<KinematicModel> {
        &self.hand
    }

    pub fn sampler(&self) -> &Arc<HandSurfaceSampler> {
        &self.sampler
    }

    /// Sets the experts' output layers to zero so every prediction is `Δφ = 0`.
    pub fn zero_output(&mut self) {
        self.head.zero_output_layer(&mut self.store);
    }

    /// `1 × 280` pose changes for a `1 × L` input and `1 × 3` gate input.
    pub(crate) fn delta_graph(&self, g: &mut Graph, input: Var, gate: Var) -> Result<Var> {
        let len = self.layout().len();
        if g.value(input).shape() != [1, len] {
            return Err(MotionError::Shape(format!("input has shape {:?}, layout expects [1, {len}]", g.value(input).shape())));
        }
        let k = g.input(self.input_scale.clone());
        let x = g.mul(input, k)?;
        let h = self.trunk.forward(g, &self.store, x)?;
        let out = self.head.forward(g, &self.store, h, Some(gate))?;
        Ok(g.scale(out, self.config.output_scale)?)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        Ok(write_checkpoint(w, &self.config, &self.store)?)
    }

    pub fn load<R: Read>(r: R, config: &MotionConfig, hand: &KinematicModel) -> Result<Self> {
        let mut m = Self::new(config, hand)?;
        read_checkpoint(r, config, &mut m.store)?;
        Ok(m)
    }
}

/// Gate input for a flat input vector: mean speed and mean displacement
/// length read from their segments, and `progress`.
pub(crate) fn phase_from_input(layout: &InputLayout, input: &[f64], progress: f64) -> [f64; 3] {
    let seg = layout.segments();
    let mean = |(o, l): (usize, usize)| {
        let s = &input[o..o + l];
        s.chunks_exact(3).map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()).sum::<f64>() / (l / 3).max(1) as f64
    };
    [mean(seg[3]), mean(seg[5]), progress]
}

/// Ten future pose changes for the flat input `input`; `progress` is the
/// normalised step index fed to the gate alongside the motion summaries.
pub fn predict_delta(net: &MotionNet, input: &[f64], progress: f64) -> Result<PoseDelta> {
    let layout = net.layout();
    if input.len() != layout.len() {
        return Err(MotionError::Shape(format!("input has {} values, layout expects {}", input.len(), layout.len())));
    }
    let mut g = Graph::new();
    let x = g.input(Tensor::row(input));
    let gate = g.input(Tensor::row(&phase_from_input(&layout, input, progress)));
    let d = net.delta_graph(&mut g, x, gate)?;
    PoseDelta::from_flat(g.value(d).data())
}
