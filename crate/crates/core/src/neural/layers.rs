use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NeuralError, Result, Tensor, Var};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every trainable tensor of a model. Graphs bind to one store.
#[derive(Debug)]
pub struct ParamStore {
    tag: u64,
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// The clone is a distinct store: graphs built on one cannot mix in the other.
    fn clone(&self) -> Self {
        Self { tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed), tensors: self.tensors.clone(), names: self.names.clone() }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors && self.names == other.names
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed), tensors: Vec::new(), names: Vec::new() }
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.tensors.push(value);
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor; shapes must match the current ones.
    pub fn set_all(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() || values.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape()) {
            return Err(NeuralError::Shape("parameter set does not match the store layout".into()));
        }
        self.tensors = values;
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Uniform fan-in initialization: entries in `±1/√fan_in`.
fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect()).expect("sized buffer")
}

/// `act(x W + b)` with `W: in × out` and `b: 1 × out`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), init_uniform(rng, input, output, input));
        let b = store.add(format!("{name}.b"), init_uniform(rng, 1, output, input));
        Self { w, b, input, output, activation }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.input {
            return Err(NeuralError::Shape(format!("dense layer expects width {}, got {}", self.input, g.value(x).cols())));
        }
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        let xw = g.matmul(x, w)?;
        let y = g.add(xw, b)?;
        self.activation.apply(g, y)
    }
}

/// Scaled dot-product attention `softmax(Q Kᵀ / √d) V`; returns the output
/// and the row-stochastic weight matrix.
pub fn attention_with_weights(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.value(q).shape(), g.value(k).shape(), g.value(v).shape());
    if qs[1] != ks[1] || ks[0] != vs[0] || qs[0] == 0 || ks[0] == 0 {
        return Err(NeuralError::Shape(format!("attention Q {qs:?}, K {ks:?}, V {vs:?}")));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (qs[1] as f64).sqrt())?;
    let weights = g.softmax_rows(scaled)?;
    Ok((g.matmul(weights, v)?, weights))
}

pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    Ok(attention_with_weights(g, q, k, v)?.0)
}

/// Single-head self-attention over the rows (tokens) of its input. With
/// projections off, `Q = K = V = X` and the head width equals the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub projections: Option<[ParamId; 3]>,
    pub input: usize,
    pub head: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, head: usize, project: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !project && head != input {
            return Err(NeuralError::Spec(format!("attention without projections needs head = input ({head} != {input})")));
        }
        let projections = project.then(|| {
            ["q", "k", "v"].map(|p| store.add(format!("{name}.w{p}"), init_uniform(rng, input, head, input)))
        });
        Ok(Self { projections, input, head })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.input {
            return Err(NeuralError::Shape(format!("attention expects width {}, got {}", self.input, g.value(x).cols())));
        }
        match self.projections {
            None => attention(g, x, x, x),
            Some(ids) => {
                let [q, k, v] = ids.map(|id| g.param(store, id).and_then(|w| g.matmul(x, w)));
                attention(g, q?, k?, v?)
            }
        }
    }
}

/// Expert blending in parameter space: `gate = softmax(gate_net(gate_input))`,
/// each layer's weights are `Σ_e gate_e · W_e`, and the blended MLP runs on `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedMlp {
    pub gate: Vec<Dense>,
    /// `experts[e][l]` holds layer `l`'s `(W, b)` for expert `e`.
    pub experts: Vec<Vec<(ParamId, ParamId)>>,
    pub widths: Vec<(usize, usize, Activation)>,
}

impl GatedMlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: &GatedSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        if spec.experts == 0 {
            return Err(NeuralError::Spec("gated layer needs at least one expert".into()));
        }
        let mut gate = Vec::new();
        let mut width = spec.gate_input;
        for (i, &h) in spec.gate_hidden.iter().enumerate() {
            gate.push(Dense::new(store, &format!("{name}.gate{i}"), width, h, Activation::Relu, rng));
            width = h;
        }
        gate.push(Dense::new(store, &format!("{name}.gate_out"), width, spec.experts, Activation::Identity, rng));
        let mut widths = Vec::new();
        let mut w = spec.input;
        for l in &spec.layers {
            widths.push((w, l.output, l.activation));
            w = l.output;
        }
        let experts = (0..spec.experts)
            .map(|e| {
                widths
                    .iter()
                    .enumerate()
                    .map(|(l, &(i, o, _))| {
                        let wid = store.add(format!("{name}.e{e}.l{l}.w"), init_uniform(rng, i, o, i));
                        let bid = store.add(format!("{name}.e{e}.l{l}.b"), init_uniform(rng, 1, o, i));
                        (wid, bid)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { gate, experts, widths })
    }

    pub fn output(&self) -> usize {
        self.widths.last().map_or(0, |w| w.1)
    }

    pub fn input(&self) -> usize {
        self.widths.first().map_or(0, |w| w.0)
    }

    /// Gate logits (`1 × E`) for a `1 × gate_input` row.
    pub fn gate_logits(&self, g: &mut Graph, store: &ParamStore, gate_input: Var) -> Result<Var> {
        let mut h = gate_input;
        for d in &self.gate {
            h = d.forward(g, store, h)?;
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, gate_input: Var, x: Var) -> Result<Var> {
        let logits = self.gate_logits(g, store, gate_input)?;
        self.forward_with_logits(g, store, logits, x)
    }

    pub fn forward_with_logits(&self, g: &mut Graph, store: &ParamStore, logits: Var, x: Var) -> Result<Var> {
        if g.value(logits).shape() != [1, self.experts.len()] {
            return Err(NeuralError::Shape(format!("gate logits {:?} for {} experts", g.value(logits).shape(), self.experts.len())));
        }
        if g.value(x).cols() != self.input() {
            return Err(NeuralError::Shape(format!("gated layer expects width {}, got {}", self.input(), g.value(x).cols())));
        }
        let gate = g.softmax_rows(logits)?;
        let mut h = x;
        for (l, &(_, _, act)) in self.widths.iter().enumerate() {
            let ws = self.experts.iter().map(|e| g.param(store, e[l].0)).collect::<Result<Vec<_>>>()?;
            let bs = self.experts.iter().map(|e| g.param(store, e[l].1)).collect::<Result<Vec<_>>>()?;
            let w = g.blend(gate, &ws)?;
            let b = g.blend(gate, &bs)?;
            let hw = g.matmul(h, w)?;
            let y = g.add(hw, b)?;
            h = act.apply(g, y)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSpec {
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatedSpec {
    pub input: usize,
    pub gate_input: usize,
    #[serde(default)]
    pub gate_hidden: Vec<usize>,
    pub experts: usize,
    pub layers: Vec<DenseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        #[serde(default)]
        activation: Activation,
    },
    SelfAttention {
        input: usize,
        head: usize,
        #[serde(default = "default_true")]
        projections: bool,
    },
    Gated(GatedSpec),
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    fn widths(&self) -> (usize, usize) {
        match self {
            LayerSpec::Dense { input, output, .. } => (*input, *output),
            LayerSpec::SelfAttention { input, head, .. } => (*input, *head),
            LayerSpec::Gated(s) => (s.input, s.layers.last().map_or(s.input, |l| l.output)),
        }
    }
}

/// Ordered layers plus the initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    /// A plain MLP: ReLU between layers, `last` on the output.
    pub fn mlp(widths: &[usize], last: Activation, seed: u64) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| LayerSpec::Dense {
                input: widths[i],
                output: widths[i + 1],
                activation: if i + 1 == n { last } else { Activation::Relu },
            })
            .collect();
        Self { layers, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NeuralError::Spec("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let (a, b) = l.widths();
            if a == 0 || b == 0 {
                return Err(NeuralError::Spec(format!("layer {i} has a zero width")));
            }
            if let LayerSpec::Gated(s) = l {
                if s.experts == 0 {
                    return Err(NeuralError::Spec(format!("layer {i}: gated layer needs at least one expert")));
                }
                if s.layers.is_empty() || s.gate_input == 0 {
                    return Err(NeuralError::Spec(format!("layer {i}: gated layer needs layers and a gate input")));
                }
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.widths().0 != b {
                    return Err(NeuralError::Spec(format!("layer {i} outputs {b} but layer {} takes {}", i + 1, next.widths().0)));
                }
            }
        }
        Ok(())
    }

    pub fn input(&self) -> usize {
        self.layers.first().map_or(0, |l| l.widths().0)
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.widths().1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Attention(SelfAttention),
    Gated(GatedMlp),
}

/// Layers registered in a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(spec: &NetworkSpec, store: &mut ParamStore, name: &str) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let n = format!("{name}.{i}");
                Ok(match l {
                    LayerSpec::Dense { input, output, activation } => Layer::Dense(Dense::new(store, &n, *input, *output, *activation, &mut rng)),
                    LayerSpec::SelfAttention { input, head, projections } => {
                        Layer::Attention(SelfAttention::new(store, &n, *input, *head, *projections, &mut rng)?)
                    }
                    LayerSpec::Gated(s) => Layer::Gated(GatedMlp::new(store, &n, s, &mut rng)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn input(&self) -> usize {
        self.spec.input()
    }

    pub fn output(&self) -> usize {
        self.spec.output()
    }

    /// Runs every layer on `x`; gated layers read `gate_input`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, gate_input: Option<Var>) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.forward(g, store, h)?,
                Layer::Attention(a) => a.forward(g, store, h)?,
                Layer::Gated(m) => {
                    let gi = gate_input.ok_or_else(|| NeuralError::Shape("gated layer needs a gate input".into()))?;
                    m.forward(g, store, gi, h)?
                }
            };
        }
        Ok(h)
    }

    /// Forward pass on a constant input, returning the output value.
    pub fn eval(&self, store: &ParamStore, x: &Tensor, gate_input: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let gv = gate_input.map(|t| g.input(t.clone()));
        let y = self.forward(&mut g, store, xv, gv)?;
        Ok(g.value(y).clone())
    }

    /// Parameters added by this network, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense(d) => ids.extend([d.w, d.b]),
                Layer::Attention(a) => ids.extend(a.projections.iter().flatten()),
                Layer::Gated(m) => {
                    for d in &m.gate {
                        ids.extend([d.w, d.b]);
                    }
                    for e in &m.experts {
                        for (w, b) in e {
                            ids.extend([*w, *b]);
                        }
                    }
                }
            }
        }
        ids.sort();
        ids
    }

    /// Zeroes the weights and bias of the final layer, so the output is zero
    /// (or the activation at zero).
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let ids: Vec<ParamId> = match self.layers.last() {
            Some(Layer::Dense(d)) => vec![d.w, d.b],
            Some(Layer::Attention(a)) => a.projections.iter().flatten().copied().collect(),
            Some(Layer::Gated(m)) => m.experts.iter().filter_map(|e| e.last()).flat_map(|(w, b)| [*w, *b]).collect(),
            None => vec![],
        };
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn identity_dense_layers_pass_input_through() {
        let mut store = ParamStore::new();
        let spec = NetworkSpec::mlp(&[3, 3, 3], Activation::Identity, 1);
        let net = Network::new(&spec, &mut store, "id").unwrap();
        for l in &net.layers {
            let Layer::Dense(d) = l else { unreachable!() };
            *store.get_mut(d.w) = Tensor::identity(3);
            store.get_mut(d.b).data_mut().fill(0.0);
        }
        let x = Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.25, 4.0]).unwrap();
        // ReLU between the two layers: use a non-negative input to stay linear.
        let pos = x.map(f64::abs);
        assert_eq!(net.eval(&store, &pos, None).unwrap(), pos);
        let single = Network::new(&NetworkSpec::mlp(&[3, 3], Activation::Identity, 1), &mut store, "one").unwrap();
        let Layer::Dense(d) = &single.layers[0] else { unreachable!() };
        *store.get_mut(d.w) = Tensor::identity(3);
        store.get_mut(d.b).data_mut().fill(0.0);
        assert_eq!(single.eval(&store, &x, None).unwrap(), x);
        assert!(net.eval(&store, &Tensor::zeros(2, 4), None).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { input: 3, output: 4, activation: Activation::Relu },
                LayerSpec::Dense { input: 5, output: 1, activation: Activation::Identity },
            ],
            seed: 0,
        };
        assert!(matches!(Network::new(&bad, &mut ParamStore::new(), "n"), Err(NeuralError::Spec(_))));
        let no_experts = NetworkSpec {
            layers: vec![LayerSpec::Gated(GatedSpec { input: 2, gate_input: 1, gate_hidden: vec![], experts: 0, layers: vec![DenseSpec { output: 2, activation: Activation::Identity }] })],
            seed: 0,
        };
        assert!(Network::new(&no_experts, &mut ParamStore::new(), "n").is_err());
        let toml_spec: NetworkSpec = toml::from_str(
            r#"
            seed = 3
            [[layers]]
            kind = "self_attention"
            input = 4
            head = 4
            projections = false
            [[layers]]
            kind = "dense"
            input = 4
            output = 2
            activation = "elu"
            "#,
        )
        .unwrap();
        assert!(toml_spec.validate().is_ok());
    }

    #[test]
    fn attention_single_token_and_identical_tokens() {
        let mut g = Graph::new();
        let q = g.input(Tensor::row(&[0.3, -1.0]));
        let v = g.input(Tensor::row(&[5.0, 7.0]));
        let out = attention(&mut g, q, q, v).unwrap();
        assert_eq!(g.value(out), g.value(v));

        let mut g = Graph::new();
        let qk = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap());
        let v = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 4.0]]).unwrap());
        let (out, w) = attention_with_weights(&mut g, qk, qk, v).unwrap();
        assert_eq!(g.value(w).data(), &[0.5; 4]);
        assert_eq!(g.value(out).data(), &[2.0, 2.0, 2.0, 2.0]);
        let bad = g.input(Tensor::zeros(2, 3));
        assert!(attention(&mut g, qk, bad, v).is_err());
    }

    fn gated_spec(experts: usize) -> GatedSpec {
        GatedSpec {
            input: 3,
            gate_input: 2,
            gate_hidden: vec![4],
            experts,
            layers: vec![DenseSpec { output: 5, activation: Activation::Elu }, DenseSpec { output: 2, activation: Activation::Identity }],
        }
    }

    /// The plain MLP expert `e` of a gated layer, evaluated directly.
    fn expert_forward(store: &ParamStore, m: &GatedMlp, e: usize, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (l, &(_, _, act)) in m.widths.iter().enumerate() {
            let (w, b) = m.experts[e][l];
            let mut y = h.matmul(store.get(w)).unwrap();
            for r in 0..y.rows() {
                for c in 0..y.cols() {
                    y.set(r, c, y.get(r, c) + store.get(b).data()[c]);
                }
            }
            let mut g = Graph::new();
            let v = g.input(y);
            let out = act.apply(&mut g, v).unwrap();
            h = g.value(out).clone();
        }
        h
    }

    #[test]
    fn gating_single_expert_and_saturated_gate() {
        let x = Tensor::from_rows(&[vec![0.2, -0.4, 1.0], vec![0.0, 0.3, -0.7]]).unwrap();
        let gi = Tensor::row(&[0.5, -1.5]);

        let mut store = ParamStore::new();
        let one = GatedMlp::new(&mut store, "g1", &gated_spec(1), &mut rng()).unwrap();
        let mut g = Graph::new();
        let (xv, gv) = (g.input(x.clone()), g.input(gi.clone()));
        let y = one.forward(&mut g, &store, gv, xv).unwrap();
        assert_eq!(g.value(y), &expert_forward(&store, &one, 0, &x));

        let four = GatedMlp::new(&mut store, "g4", &gated_spec(2), &mut rng()).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let logits = g.input(Tensor::row(&[1e6, -1e6]));
        let y = four.forward_with_logits(&mut g, &store, logits, xv).unwrap();
        let diff = g.value(y).zip_map(&expert_forward(&store, &four, 0, &x), |a, b| (a - b).abs());
        assert!(diff.max_abs() <= 1e-6);

        assert!(GatedMlp::new(&mut store, "g0", &gated_spec(0), &mut rng()).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::Identity, 11);
        let (mut a, mut b) = (ParamStore::new(), ParamStore::new());
        Network::new(&spec, &mut a, "n").unwrap();
        Network::new(&spec, &mut b, "n").unwrap();
        assert_eq!(a, b);
        let mut c = ParamStore::new();
        Network::new(&NetworkSpec { seed: 12, ..spec }, &mut c, "n").unwrap();
        assert_ne!(a, c);
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// `Σ R ⊙ net(x)` for a fixed readout `R`.
    fn readout_loss(net: &Network, store: &ParamStore, x: &Tensor, gi: Option<&Tensor>, r: &Tensor) -> (Graph, Var, Var) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let gv = gi.map(|t| g.input(t.clone()));
        let y = net.forward(&mut g, store, xv, gv).unwrap();
        let rv = g.input(r.clone());
        let m = g.mul(y, rv).unwrap();
        let l = g.sum(m).unwrap();
        (g, xv, l)
    }

    /// Randomized central-difference check over every parameter and the input.
    fn fd_check(spec: &NetworkSpec, rows: usize, gate_width: Option<usize>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Network::new(&NetworkSpec { seed, ..spec.clone() }, &mut store, "n").unwrap();
        let x = rand_tensor(&mut rng, rows, net.input());
        let gi = gate_width.map(|w| rand_tensor(&mut rng, 1, w));
        let r = rand_tensor(&mut rng, rows, net.output());
        let (mut g, xv, l) = readout_loss(&net, &store, &x, gi.as_ref(), &r);
        g.backward(l).unwrap();
        let pgrads = g.param_grads(&store).unwrap();
        let xgrad = g.grad(xv).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let dirs: Vec<Tensor> = store.tensors().iter().map(|t| rand_tensor(&mut rng, t.rows(), t.cols())).collect();
            let dx = rand_tensor(&mut rng, x.rows(), x.cols());
            let eval = |s: f64| {
                let mut st = store.clone();
                st.set_all(store.tensors().iter().zip(&dirs).map(|(t, d)| t.zip_map(d, |a, b| a + s * b)).collect()).unwrap();
                let xs = x.zip_map(&dx, |a, b| a + s * b);
                let (g, _, l) = readout_loss(&net, &st, &xs, gi.as_ref(), &r);
                g.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic: f64 = pgrads.iter().zip(&dirs).map(|(g, d)| g.dot(d)).sum::<f64>() + xgrad.dot(&dx);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel < 1e-4, "seed {seed}: numeric {numeric}, analytic {analytic}");
        }
    }

    #[test]
    fn dense_attention_and_gating_gradients_match_finite_differences() {
        let mlp = NetworkSpec::mlp(&[4, 6, 5, 3], Activation::Tanh, 0);
        let attn = NetworkSpec {
            layers: vec![
                LayerSpec::SelfAttention { input: 4, head: 5, projections: true },
                LayerSpec::Dense { input: 5, output: 2, activation: Activation::Elu },
            ],
            seed: 0,
        };
        let raw = NetworkSpec { layers: vec![LayerSpec::SelfAttention { input: 3, head: 3, projections: false }], seed: 0 };
        let gated = NetworkSpec { layers: vec![LayerSpec::Gated(gated_spec(4))], seed: 0 };
        for seed in 0..3 {
            fd_check(&mlp, 3, None, seed);
            fd_check(&attn, 6, None, seed);
            fd_check(&raw, 5, None, seed);
            fd_check(&gated, 2, Some(2), seed);
        }
    }

    #[test]
    fn unused_parameter_has_exactly_zero_gradient() {
        let mut store = ParamStore::new();
        let net = Network::new(&NetworkSpec::mlp(&[2, 2], Activation::Identity, 0), &mut store, "n").unwrap();
        let unused = store.add("unused", Tensor::filled(2, 2, 3.0));
        let (mut g, _, l) = readout_loss(&net, &store, &Tensor::row(&[1.0, 2.0]), None, &Tensor::row(&[1.0, 1.0]));
        g.backward(l).unwrap();
        let grads = g.param_grads(&store).unwrap();
        assert!(grads[unused.index()].data().iter().all(|&v| v == 0.0));
        assert!(grads[0].max_abs() > 0.0);
    }
}
