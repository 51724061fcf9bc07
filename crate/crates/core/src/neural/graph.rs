use super::tensor::{gemm, Tensor};
use super::{NeuralError, ParamId, ParamStore, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Square,
    Abs,
}

type CustomBackward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Unary(usize, Unary),
    Softmax(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Reshape(usize),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    MaxRows(usize, Vec<usize>),
    RepeatRows(usize),
    Blend(usize, Vec<usize>),
    BceLogits(usize, Tensor),
    Norm(usize),
    Custom(Vec<usize>, CustomBackward),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded operations. Every op appends a node; `backward` walks the
/// tape once in reverse, so nodes only ever refer to earlier nodes.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
    store_tag: Option<u64>,
    params: Vec<(ParamId, usize)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Shape `b` may be broadcast onto `a`: equal, a `1 × cols` row, or `1 × 1`.
fn broadcastable(a: &Tensor, b: &Tensor) -> bool {
    b.shape() == a.shape() || (b.rows() == 1 && (b.cols() == a.cols() || b.cols() == 1))
}

fn broadcast_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (cols, bc) = (a.cols(), b.cols());
    let brows = b.rows();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (r, c) = (i / cols, i % cols);
            let y = match (brows, bc) {
                (1, 1) => b.data()[0],
                (1, _) => b.data()[c],
                _ => b.data()[r * cols + c],
            };
            f(x, y)
        })
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("broadcast keeps the shape of a")
}

/// Sums a gradient of `a`'s shape down to the broadcast shape `like`.
fn reduce_to(g: &Tensor, like: [usize; 2]) -> Tensor {
    if g.shape() == like {
        return g.clone();
    }
    if like == [1, 1] {
        return Tensor::scalar(g.sum());
    }
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row_slice(r)) {
            *o += v;
        }
    }
    out
}

fn unary_forward(u: Unary, x: f64) -> f64 {
    match u {
        Unary::Relu => x.max(0.0),
        Unary::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp_m1()
            }
        }
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Square => x * x,
        Unary::Abs => x.abs(),
    }
}

/// Derivative from the input `x` and output `y`.
fn unary_derivative(u: Unary, x: f64, y: f64) -> f64 {
    match u {
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Elu => {
            if x > 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Square => 2.0 * x,
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: None, store_tag: None, params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.grads.is_some() {
            return Err(NeuralError::Graph("graph already differentiated; record a new forward pass".into()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf whose gradient is reported by [`Graph::grad`]. Leaves added
    /// after `backward` have zero gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// A leaf holding parameter `id`; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        match self.store_tag {
            Some(tag) if tag != store.tag() => return Err(NeuralError::Graph("graph already bound to another parameter store".into())),
            _ => self.store_tag = Some(store.tag()),
        }
        if let Some(&(_, node)) = self.params.iter().find(|(p, _)| *p == id) {
            return Ok(Var(node));
        }
        let v = self.push(store.get(id).clone(), Op::Leaf)?;
        self.params.push((id, v.0));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a.0, b.0))
    }

    fn check_broadcast(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if broadcastable(self.value(a), self.value(b)) {
            Ok(())
        } else {
            Err(NeuralError::Shape(format!("{what} {:?} with {:?}", self.value(a).shape(), self.value(b).shape())))
        }
    }

    /// `a + b`, broadcasting `b` when it is a row or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "add")?;
        let value = broadcast_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "sub")?;
        let value = broadcast_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a.0, b.0))
    }

    /// Elementwise product, broadcasting `b` like [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "mul")?;
        let value = broadcast_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scaled(s);
        self.push(value, Op::Scale(a.0, s))
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let value = self.value(a).map(|x| unary_forward(u, x));
        self.push(value, Op::Unary(a.0, u))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    /// Exponential linear unit with α = 1.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Elu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.value(*p).rows()).ok_or_else(|| NeuralError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(NeuralError::Shape("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|p| self.value(*p).cols()).ok_or_else(|| NeuralError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(NeuralError::Shape("concat_rows column counts differ".into()));
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).data().iter().copied()).collect();
        let value = Tensor::new(data.len() / cols.max(1), cols, data)?;
        self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(NeuralError::Shape(format!("columns {start}..{} of {}", start + len, t.cols())));
        }
        let data: Vec<f64> = (0..t.rows()).flat_map(|r| t.row_slice(r)[start..start + len].to_vec()).collect();
        let value = Tensor::new(t.rows(), len, data)?;
        self.push(value, Op::SliceCols(a.0, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows() {
            return Err(NeuralError::Shape(format!("rows {start}..{} of {}", start + len, t.rows())));
        }
        let value = Tensor::new(len, t.cols(), t.data()[start * t.cols()..(start + len) * t.cols()].to_vec())?;
        self.push(value, Op::SliceRows(a.0, start))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshaped(rows, cols)?;
        self.push(value, Op::Reshape(a.0))
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Column sums over rows: `r × c → 1 × c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = reduce_to(t, [1, t.cols()]);
        self.push(value, Op::SumRows(a.0))
    }

    /// Row sums over columns: `r × c → r × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let value = Tensor::new(t.rows(), 1, data)?;
        self.push(value, Op::SumCols(a.0))
    }

    /// Column-wise maximum over rows: `r × c → 1 × c`. Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(NeuralError::Shape("max over zero rows".into()));
        }
        let mut arg = vec![0usize; t.cols()];
        let mut best = t.row_slice(0).to_vec();
        for r in 1..t.rows() {
            for (c, &v) in t.row_slice(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    arg[c] = r;
                }
            }
        }
        self.push(Tensor::row(&best), Op::MaxRows(a.0, arg))
    }

    /// Tiles a `1 × c` row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(NeuralError::Shape(format!("repeat_rows needs a row, got {:?}", t.shape())));
        }
        let value = Tensor::new(n, t.cols(), t.data().repeat(n))?;
        self.push(value, Op::RepeatRows(a.0))
    }

    /// `Σ_e weights[e] · parts[e]` for a `1 × E` weight row and equally shaped parts.
    pub fn blend(&mut self, weights: Var, parts: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.rows() != 1 || w.cols() != parts.len() || parts.is_empty() {
            return Err(NeuralError::Shape(format!("blend weights {:?} for {} parts", w.shape(), parts.len())));
        }
        let shape = self.value(parts[0]).shape();
        if parts.iter().any(|p| self.value(*p).shape() != shape) {
            return Err(NeuralError::Shape("blend parts differ in shape".into()));
        }
        let mut value = Tensor::zeros(shape[0], shape[1]);
        for (e, p) in parts.iter().enumerate() {
            value.add_assign(&self.value(*p).scaled(w.data()[e]));
        }
        self.push(value, Op::Blend(weights.0, parts.iter().map(|p| p.0).collect()))
    }

    /// Elementwise binary cross entropy of `sigmoid(logits)` against constant targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != targets.shape() {
            return Err(NeuralError::Shape(format!("bce logits {:?} vs targets {:?}", x.shape(), targets.shape())));
        }
        let value = x.zip_map(targets, |x, y| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p());
        self.push(value, Op::BceLogits(logits.0, targets.clone()))
    }

    /// Euclidean norm of all entries, as `1 × 1`. The gradient at zero is zero.
    pub fn norm(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).dot(self.value(a)).sqrt());
        self.push(value, Op::Norm(a.0))
    }

    /// Records an externally computed value. `backward` maps the output
    /// gradient to one gradient per input, each shaped like that input.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: impl Fn(&Tensor) -> Vec<Tensor> + 'static) -> Result<Var> {
        self.push(value, Op::Custom(inputs.iter().map(|v| v.0).collect(), Box::new(backward)))
    }

    /// Reverse pass from a `1 × 1` loss. A graph is differentiated at most once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(NeuralError::Graph("backward called twice without a new forward pass".into()));
        }
        if self.value(loss).shape() != [1, 1] {
            return Err(NeuralError::Shape(format!("loss must be 1x1, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].clone() else { continue };
            for (j, g) in self.local_grads(i, &gout) {
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradients of node `i`'s inputs given its output gradient.
    fn local_grads(&self, i: usize, gout: &Tensor) -> Vec<(usize, Tensor)> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                gemm(gout, false, tb, true, &mut ga);
                let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                gemm(ta, true, gout, false, &mut gb);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, gout.clone()), (*b, reduce_to(gout, val(*b).shape()))],
            Op::Sub(a, b) => vec![(*a, gout.clone()), (*b, reduce_to(&gout.scaled(-1.0), val(*b).shape()))],
            Op::Mul(a, b) => {
                let ga = broadcast_map(gout, val(*b), |g, y| g * y);
                let gb = reduce_to(&gout.zip_map(val(*a), |g, x| g * x), val(*b).shape());
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, gout.scaled(*s))],
            Op::Unary(a, u) => {
                let x = val(*a);
                let data = gout.data().iter().zip(x.data()).zip(node.value.data()).map(|((g, &x), &y)| g * unary_derivative(*u, x, y)).collect();
                vec![(*a, Tensor::new(x.rows(), x.cols(), data).expect("unary keeps shape"))]
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), gout.row_slice(r));
                    let inner: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..y.cols() {
                        gx.set(r, c, yr[c] * (gr[c] - inner));
                    }
                }
                vec![(*a, gx)]
            }
            Op::Transpose(a) => vec![(*a, gout.transpose())],
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = val(p).cols();
                        let data = (0..gout.rows()).flat_map(|r| gout.row_slice(r)[offset..offset + w].to_vec()).collect();
                        offset += w;
                        (p, Tensor::new(gout.rows(), w, data).expect("concat slice"))
                    })
                    .collect()
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let n = val(p).len();
                        let t = Tensor::new(val(p).rows(), val(p).cols(), gout.data()[offset..offset + n].to_vec()).expect("concat slice");
                        offset += n;
                        (p, t)
                    })
                    .collect()
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for r in 0..gout.rows() {
                    for c in 0..gout.cols() {
                        g.set(r, start + c, gout.get(r, c));
                    }
                }
                vec![(*a, g)]
            }
            Op::SliceRows(a, start) => {
                let x = val(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                g.data_mut()[start * x.cols()..start * x.cols() + gout.len()].copy_from_slice(gout.data());
                vec![(*a, g)]
            }
            Op::Reshape(a) => vec![(*a, gout.reshaped(val(*a).rows(), val(*a).cols()).expect("reshape back"))],
            Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).rows(), val(*a).cols(), gout.item()))],
            Op::SumRows(a) => {
                let x = val(*a);
                vec![(*a, Tensor::new(x.rows(), x.cols(), gout.data().repeat(x.rows())).expect("tile"))]
            }
            Op::SumCols(a) => {
                let x = val(*a);
                let data = (0..x.rows()).flat_map(|r| std::iter::repeat_n(gout.data()[r], x.cols())).collect();
                vec![(*a, Tensor::new(x.rows(), x.cols(), data).expect("tile"))]
            }
            Op::MaxRows(a, arg) => {
                let x = val(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for (c, &r) in arg.iter().enumerate() {
                    g.set(r, c, gout.data()[c]);
                }
                vec![(*a, g)]
            }
            Op::RepeatRows(a) => vec![(*a, reduce_to(gout, [1, gout.cols()]))],
            Op::Blend(w, parts) => {
                let weights = val(*w);
                let gw = Tensor::row(&parts.iter().map(|&p| gout.dot(val(p))).collect::<Vec<_>>());
                let mut out = vec![(*w, gw)];
                out.extend(parts.iter().enumerate().map(|(e, &p)| (p, gout.scaled(weights.data()[e]))));
                out
            }
            Op::BceLogits(a, targets) => {
                let g = val(*a).zip_map(targets, |x, y| sigmoid(x) - y).zip_map(gout, |d, g| d * g);
                vec![(*a, g)]
            }
            Op::Norm(a) => {
                let n = node.value.item();
                let g = if n > 0.0 { val(*a).scaled(gout.item() / n) } else { Tensor::zeros(val(*a).rows(), val(*a).cols()) };
                vec![(*a, g)]
            }
            Op::Custom(inputs, f) => {
                let gs = f(gout);
                debug_assert_eq!(gs.len(), inputs.len());
                inputs.iter().copied().zip(gs).collect()
            }
        }
    }

    /// Gradient of the differentiated loss with respect to `v`; zero when `v`
    /// does not influence the loss.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        let grads = self.grads.as_ref().ok_or_else(|| NeuralError::Graph("backward has not run".into()))?;
        let shape = self.value(v).shape();
        Ok(grads.get(v.0).cloned().flatten().unwrap_or_else(|| Tensor::zeros(shape[0], shape[1])))
    }

    /// One gradient per parameter in `store`, zeros for those never used.
    pub fn param_grads(&self, store: &ParamStore) -> Result<Vec<Tensor>> {
        if self.store_tag.is_some_and(|t| t != store.tag()) {
            return Err(NeuralError::Graph("gradients requested for a different parameter store".into()));
        }
        let grads = self.grads.as_ref().ok_or_else(|| NeuralError::Graph("backward has not run".into()))?;
        Ok(store
            .ids()
            .map(|id| {
                let t = store.get(id);
                self.params
                    .iter()
                    .find(|(p, _)| *p == id)
                    .and_then(|(_, node)| grads[*node].clone())
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference directional derivative check of `f` at each input.
    fn check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.backward(out).unwrap();
        let grads: Vec<Tensor> = vars.iter().map(|v| g.grad(*v).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..5 {
            let dirs: Vec<Tensor> = inputs.iter().map(|t| rand_tensor(&mut rng, t.rows(), t.cols())).collect();
            let eval = |s: f64| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs.iter().zip(&dirs).map(|(t, d)| g.input(t.zip_map(d, |a, b| a + s * b))).collect();
                let out = f(&mut g, &vars);
                g.value(out).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.dot(d)).sum();
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel < 1e-6, "numeric {numeric} analytic {analytic}");
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 4, 2);
        let row = rand_tensor(&mut rng, 1, 4);
        let pos = a.map(|v| v.abs() + 0.5);
        check(&[a.clone(), b.clone()], |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let t = g.tanh(m).unwrap();
            g.sum(t).unwrap()
        });
        check(&[a.clone(), row.clone()], |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let d = g.sub(s, v[1]).unwrap();
            let m = g.mul(d, v[1]).unwrap();
            let e = g.elu(m).unwrap();
            let q = g.square(e).unwrap();
            g.mean(q).unwrap()
        });
        check(&[a.clone()], |g, v| {
            let s = g.softmax_rows(v[0]).unwrap();
            let t = g.transpose(s).unwrap();
            let w = g.sum_cols(t).unwrap();
            let q = g.square(w).unwrap();
            g.sum(q).unwrap()
        });
        check(&[a.clone(), row.clone()], |g, v| {
            let c = g.concat_rows(&[v[0], v[1]]).unwrap();
            let m = g.max_rows(c).unwrap();
            let r = g.repeat_rows(m, 3).unwrap();
            let cc = g.concat_cols(&[r, v[0]]).unwrap();
            let s = g.slice_cols(cc, 2, 4).unwrap();
            let sr = g.slice_rows(s, 1, 2).unwrap();
            let rs = g.reshape(sr, 4, 2).unwrap();
            let sg = g.sigmoid(rs).unwrap();
            let n = g.norm(sg).unwrap();
            let sums = g.sum_rows(v[0]).unwrap();
            let sq = g.square(sums).unwrap();
            let total = g.sum(sq).unwrap();
            g.add(n, total).unwrap()
        });
        check(&[pos.clone()], |g, v| {
            let l = g.ln(v[0]).unwrap();
            let e = g.exp(l).unwrap();
            let a = g.abs(e).unwrap();
            let s = g.scale(a, -0.7).unwrap();
            let r = g.relu(s).unwrap();
            let q = g.sum(r).unwrap();
            let t = g.sum(l).unwrap();
            g.add(q, t).unwrap()
        });
        let targets = a.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        check(&[a.clone(), rand_tensor(&mut rng, 1, 3)], |g, v| {
            let w = g.softmax_rows(v[1]).unwrap();
            let x2 = g.scale(v[0], 2.0).unwrap();
            let x3 = g.tanh(v[0]).unwrap();
            let b = g.blend(w, &[v[0], x2, x3]).unwrap();
            let l = g.bce_with_logits(b, &targets).unwrap();
            g.sum(l).unwrap()
        });
    }

    #[test]
    fn half_squared_norm_gradient_is_the_input() {
        let mut g = Graph::new();
        let w = g.input(Tensor::identity(2));
        let x = g.input(Tensor::new(2, 1, vec![1.0, 2.0]).unwrap());
        let y = g.matmul(w, x).unwrap();
        let q = g.square(y).unwrap();
        let s = g.sum(q).unwrap();
        let loss = g.scale(s, 0.5).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
        assert!(g.backward(loss).is_err());
        let late = g.input(Tensor::scalar(1.0));
        assert_eq!(g.grad(late).unwrap().item(), 0.0);
        assert!(g.square(late).is_err());
    }

    #[test]
    fn blend_and_custom_ops() {
        let mut g = Graph::new();
        let w = g.input(Tensor::row(&[0.25, 0.75]));
        let a = g.input(Tensor::row(&[4.0, 0.0]));
        let b = g.input(Tensor::row(&[0.0, 4.0]));
        let m = g.blend(w, &[a, b]).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 3.0]);
        let c = g.custom(&[m], Tensor::scalar(4.0), |go| vec![Tensor::row(&[go.item(), 2.0 * go.item()])]).unwrap();
        g.backward(c).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.25, 0.5]);
        assert_eq!(g.grad(w).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let x = Tensor::row(&[1.0, -2.0, 0.5, 3.0]);
        let a = softmax_rows(&x);
        let b = softmax_rows(&x.map(|v| v + 123.0));
        assert!(a.zip_map(&b, |p, q| (p - q).abs()).max_abs() <= 1e-12);
        assert!((a.sum() - 1.0).abs() < 1e-12);
        let huge = softmax_rows(&Tensor::row(&[1e6, -1e6]));
        assert_eq!(huge.data(), &[1.0, 0.0]);
    }

    #[test]
    fn bce_with_logits_is_finite_for_large_logits() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[800.0, -800.0]));
        let l = g.bce_with_logits(x, &Tensor::row(&[1.0, 0.0])).unwrap();
        assert!(g.value(l).max_abs() < 1e-300);
        let mut g = Graph::new();
        let x = g.input(Tensor::row(&[0.0]));
        let l = g.bce_with_logits(x, &Tensor::row(&[1.0])).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(2, 2));
        assert!(g.matmul(a, a).is_err());
        assert!(g.add(a, b).is_err());
        assert!(g.backward(a).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
    }
}
