use std::collections::BTreeMap;

use super::kernels::{self, Reduce};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var, Option<Vec<bool>>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    IndexSelect(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, usize),
    Pick(Var, Vec<usize>),
    Reduce(Var, Reduce, Option<usize>),
    RowL2Normalize(Var),
    Mse(Var, Tensor),
    BceWithLogits(Var, Tensor),
    CrossEntropy(Var, Vec<usize>),
    Huber(Var, Tensor, f64),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of operations for one forward/backward pass.
///
/// A tape is built fresh for each optimization step and consumed by
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of the trainable leaves, keyed by their handle.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += x;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_node(t, Op::Leaf, true)
    }

    /// Records a constant input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_node(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("tape value was freed by backward")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite tensor produced by {op:?}");
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let rg = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, rg)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Minimum(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat(vs, _) => vs.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Clamp(a, _, _)
            | Op::Transpose(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a, _)
            | Op::Slice(a, _, _)
            | Op::IndexSelect(a, _)
            | Op::SegmentMean(a, _, _)
            | Op::Pick(a, _)
            | Op::Reduce(a, _, _)
            | Op::RowL2Normalize(a)
            | Op::Mse(a, _)
            | Op::BceWithLogits(a, _)
            | Op::CrossEntropy(a, _)
            | Op::Huber(a, _, _) => vec![*a],
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = kernels::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = kernels::zip_broadcast("div", self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = kernels::map(self.value(a), |x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = kernels::map(self.value(a), |x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = kernels::map(self.value(a), f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = kernels::map(self.value(a), f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = kernels::map(self.value(a), |x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = kernels::map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = kernels::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = kernels::leaky_relu(self.value(a), slope);
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = kernels::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = kernels::map(self.value(a), |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "minimum",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v = kernels::zip_broadcast("minimum", ta, tb, f64::min)?;
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = kernels::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = kernels::softmax_rows(self.value(a))?;
        Ok(self.push(v, Op::Softmax(a)))
    }

    /// Row-wise log-softmax; masked-out entries receive zero probability and zero gradient.
    pub fn log_softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var, TensorError> {
        let v = kernels::log_softmax_rows(self.value(a), mask.as_deref())?;
        Ok(self.push(v, Op::LogSoftmax(a, mask)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = kernels::concat(&ts, axis)?;
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let v = kernels::slice(self.value(a), axis, start, end)?;
        Ok(self.push(v, Op::Slice(a, axis, start)))
    }

    pub fn index_select(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let v = kernels::index_select_rows(self.value(a), &idx)?;
        Ok(self.push(v, Op::IndexSelect(a, idx)))
    }

    pub fn segment_mean(&mut self, a: Var, segment: Vec<usize>, segments: usize) -> Result<Var, TensorError> {
        let v = kernels::segment_mean(self.value(a), &segment, segments)?;
        Ok(self.push(v, Op::SegmentMean(a, segment, segments)))
    }

    /// Picks column `idx[r]` from each row `r`, producing an `[n, 1]` column.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (n, m) = t.require_rank2("pick")?;
        if idx.len() != n || idx.iter().any(|&c| c >= m) {
            return Err(TensorError::Invalid {
                op: "pick",
                msg: format!("{} indices for shape {:?}", idx.len(), t.shape()),
            });
        }
        let data = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let v = Tensor::from_parts(vec![n, 1], data);
        Ok(self.push(v, Op::Pick(a, idx)))
    }

    pub fn reduce(&mut self, a: Var, kind: Reduce, axis: Option<usize>) -> Result<Var, TensorError> {
        let v = kernels::reduce(self.value(a), kind, axis)?;
        Ok(self.push(v, Op::Reduce(a, kind, axis)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, Reduce::Sum, None).expect("non-empty")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, Reduce::Mean, None).expect("non-empty")
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = kernels::row_l2_normalize(self.value(a))?;
        Ok(self.push(v, Op::RowL2Normalize(a)))
    }

    fn check_target(&self, op: &'static str, a: Var, target: &Tensor) -> Result<(), TensorError> {
        if self.value(a).shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, a: Var, target: Tensor) -> Result<Var, TensorError> {
        self.check_target("mse_loss", a, &target)?;
        let x = self.value(a);
        let s: f64 = x.data().iter().zip(target.data()).map(|(p, t)| (p - t).powi(2)).sum();
        let v = Tensor::scalar(s / x.len().max(1) as f64);
        Ok(self.push(v, Op::Mse(a, target)))
    }

    /// Mean binary cross-entropy of logits against {0,1} (or soft) targets.
    pub fn bce_with_logits_loss(&mut self, a: Var, target: Tensor) -> Result<Var, TensorError> {
        self.check_target("bce_with_logits_loss", a, &target)?;
        let x = self.value(a);
        let s: f64 = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(z, t)| kernels::softplus(*z) - t * z)
            .sum();
        let v = Tensor::scalar(s / x.len().max(1) as f64);
        Ok(self.push(v, Op::BceWithLogits(a, target)))
    }

    /// Mean cross-entropy of row logits against class indices.
    pub fn cross_entropy_loss(&mut self, a: Var, classes: Vec<usize>) -> Result<Var, TensorError> {
        let x = self.value(a);
        let (n, m) = x.require_rank2("cross_entropy_loss")?;
        if classes.len() != n || classes.iter().any(|&c| c >= m) {
            return Err(TensorError::Invalid {
                op: "cross_entropy_loss",
                msg: format!("{} class targets for logits {:?}", classes.len(), x.shape()),
            });
        }
        let ls = kernels::log_softmax_rows(x, None)?;
        let s: f64 = classes.iter().enumerate().map(|(r, &c)| -ls.get(r, c)).sum();
        let v = Tensor::scalar(s / n.max(1) as f64);
        Ok(self.push(v, Op::CrossEntropy(a, classes)))
    }

    /// Mean Huber (smooth L1) loss with threshold `delta`.
    pub fn huber_loss(&mut self, a: Var, target: Tensor, delta: f64) -> Result<Var, TensorError> {
        self.check_target("huber_loss", a, &target)?;
        let x = self.value(a);
        let s: f64 = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let d = (p - t).abs();
                if d <= delta {
                    0.5 * d * d
                } else {
                    delta * (d - 0.5 * delta)
                }
            })
            .sum();
        let v = Tensor::scalar(s / x.len().max(1) as f64);
        Ok(self.push(v, Op::Huber(a, target, delta)))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every trainable
    /// leaf reachable from `loss` and frees intermediate values.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (input, gi) in self.local_grads(i, &g)? {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], gi);
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad {
                    if let Some(g) = grads[i].take() {
                        out.grads.insert(Var(i), g);
                    }
                }
            } else {
                node.value = None;
            }
        }
        Ok(out)
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>, TensorError> {
        let out = self.nodes[i].value.as_ref().expect("value present");
        let val = |v: &Var| self.value(*v);
        let zipmap = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().zip(a.data()).map(|(gv, x)| f(*gv, *x)).collect(),
            )
        };
        let res = match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, kernels::reduce_to_shape(g, val(a).shape())),
                (*b, kernels::reduce_to_shape(g, val(b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, kernels::reduce_to_shape(g, val(a).shape())),
                (*b, kernels::reduce_to_shape(&kernels::map(g, |x| -x), val(b).shape())),
            ],
            Op::Mul(a, b) => {
                let ga = kernels::mul(g, val(b))?;
                let gb = kernels::mul(g, val(a))?;
                vec![
                    (*a, kernels::reduce_to_shape(&ga, val(a).shape())),
                    (*b, kernels::reduce_to_shape(&gb, val(b).shape())),
                ]
            }
            Op::Div(a, b) => {
                let ga = kernels::zip_broadcast("div", g, val(b), |x, y| x / y)?;
                let q = kernels::zip_broadcast("div", out, val(b), |x, y| x / y)?;
                let gb = kernels::zip_broadcast("div", g, &q, |x, y| -x * y)?;
                vec![
                    (*a, kernels::reduce_to_shape(&ga, val(a).shape())),
                    (*b, kernels::reduce_to_shape(&gb, val(b).shape())),
                ]
            }
            Op::Scale(a, s) => vec![(*a, kernels::map(g, |x| x * s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Exp(a) => vec![(*a, zipmap(out, &|gv, y| gv * y))],
            Op::Log(a) => vec![(*a, zipmap(val(a), &|gv, x| gv / x))],
            Op::Square(a) => vec![(*a, zipmap(val(a), &|gv, x| 2.0 * gv * x))],
            Op::Tanh(a) => vec![(*a, zipmap(out, &|gv, y| gv * (1.0 - y * y)))],
            Op::Relu(a) => vec![(*a, zipmap(val(a), &|gv, x| if x > 0.0 { gv } else { 0.0 }))],
            Op::LeakyRelu(a, s) => {
                let s = *s;
                vec![(*a, zipmap(val(a), &|gv, x| if x > 0.0 { gv } else { s * gv }))]
            }
            Op::Sigmoid(a) => vec![(*a, zipmap(out, &|gv, y| gv * y * (1.0 - y)))],
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![(*a, zipmap(val(a), &|gv, x| if x > lo && x < hi { gv } else { 0.0 }))]
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                for k in 0..g.len() {
                    if ta.data()[k] <= tb.data()[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::MatMul(a, b) => {
                let ga = kernels::matmul(g, &kernels::transpose(val(b))?)?;
                let gb = kernels::matmul(&kernels::transpose(val(a))?, g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, kernels::transpose(g)?)],
            Op::Softmax(a) => {
                let m = out.cols();
                let mut ga = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row_slice(r), g.row_slice(r));
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..m {
                        ga.data_mut()[r * m + c] = y[c] * (gr[c] - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::LogSoftmax(a, mask) => {
                let m = out.cols();
                let keep = |k: usize| mask.as_ref().is_none_or(|mk| mk[k]);
                let mut ga = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    let gsum: f64 = (0..m).filter(|c| keep(r * m + c)).map(|c| g.get(r, c)).sum();
                    for c in 0..m {
                        let k = r * m + c;
                        if keep(k) {
                            ga.data_mut()[k] = g.data()[k] - out.data()[k].exp() * gsum;
                        }
                    }
                }
                vec![(*a, ga)]
            }
            Op::Concat(parts, axis) => {
                let mut res = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let t = val(p);
                    let extent = if *axis == 0 { t.rows() } else { t.cols() };
                    res.push((*p, kernels::slice(g, *axis, offset, offset + extent)?));
                    offset += extent;
                }
                res
            }
            Op::Slice(a, axis, start) => {
                let t = val(a);
                let mut ga = Tensor::zeros(t.shape());
                let (gn, gm) = (g.rows(), g.cols());
                let m = t.cols();
                for r in 0..gn {
                    for c in 0..gm {
                        let (rr, cc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                        ga.data_mut()[rr * m + cc] = g.get(r, c);
                    }
                }
                vec![(*a, ga)]
            }
            Op::IndexSelect(a, idx) => {
                let t = val(a);
                let m = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..m {
                        ga.data_mut()[src * m + c] += g.get(r, c);
                    }
                }
                vec![(*a, ga)]
            }
            Op::SegmentMean(a, segment, segments) => {
                let t = val(a);
                let m = t.cols();
                let counts = kernels::segment_counts(segment, *segments);
                let mut ga = Tensor::zeros(t.shape());
                for (r, &s) in segment.iter().enumerate() {
                    let w = 1.0 / counts[s] as f64;
                    for c in 0..m {
                        ga.data_mut()[r * m + c] = w * g.get(s, c);
                    }
                }
                vec![(*a, ga)]
            }
            Op::Pick(a, idx) => {
                let t = val(a);
                let m = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                for (r, &c) in idx.iter().enumerate() {
                    ga.data_mut()[r * m + c] = g.data()[r];
                }
                vec![(*a, ga)]
            }
            Op::Reduce(a, kind, axis) => vec![(*a, reduce_grad(val(a), out, g, *kind, *axis))],
            Op::RowL2Normalize(a) => {
                let x = val(a);
                let m = x.cols();
                let mut ga = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    let xr = x.row_slice(r);
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (y, gr) = (out.row_slice(r), g.row_slice(r));
                    if norm > kernels::L2_EPS {
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..m {
                            ga.data_mut()[r * m + c] = (gr[c] - y[c] * dot) / norm;
                        }
                    } else {
                        for c in 0..m {
                            ga.data_mut()[r * m + c] = gr[c] / kernels::L2_EPS;
                        }
                    }
                }
                vec![(*a, ga)]
            }
            Op::Mse(a, target) => {
                let x = val(a);
                let k = 2.0 * g.item() / x.len().max(1) as f64;
                let data = x.data().iter().zip(target.data()).map(|(p, t)| k * (p - t)).collect();
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), data))]
            }
            Op::BceWithLogits(a, target) => {
                let x = val(a);
                let k = g.item() / x.len().max(1) as f64;
                let data = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(z, t)| k * (kernels::sigmoid_scalar(*z) - t))
                    .collect();
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), data))]
            }
            Op::CrossEntropy(a, classes) => {
                let x = val(a);
                let mut ga = kernels::softmax_rows(x)?;
                let m = x.cols();
                let k = g.item() / x.rows().max(1) as f64;
                for (r, &c) in classes.iter().enumerate() {
                    ga.data_mut()[r * m + c] -= 1.0;
                }
                for v in ga.data_mut() {
                    *v *= k;
                }
                vec![(*a, ga)]
            }
            Op::Huber(a, target, delta) => {
                let x = val(a);
                let k = g.item() / x.len().max(1) as f64;
                let d = *delta;
                let data = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| k * (p - t).clamp(-d, d))
                    .collect();
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), data))]
            }
        };
        Ok(res)
    }
}

fn reduce_grad(x: &Tensor, out: &Tensor, g: &Tensor, kind: Reduce, axis: Option<usize>) -> Tensor {
    let mut ga = Tensor::zeros(x.shape());
    match axis {
        None => match kind {
            Reduce::Sum => ga.data_mut().fill(g.item()),
            Reduce::Mean => ga.data_mut().fill(g.item() / x.len() as f64),
            Reduce::Max | Reduce::Min => {
                let k = x.data().iter().position(|v| *v == out.item()).unwrap_or(0);
                ga.data_mut()[k] = g.item();
            }
        },
        Some(ax) => {
            let (n, m) = (x.rows(), x.cols());
            let (outer, inner) = if ax == 0 { (m, n) } else { (n, m) };
            for o in 0..outer {
                let idx = |k: usize| if ax == 0 { k * m + o } else { o * m + k };
                let gv = g.data()[o];
                match kind {
                    Reduce::Sum => (0..inner).for_each(|k| ga.data_mut()[idx(k)] = gv),
                    Reduce::Mean => (0..inner).for_each(|k| ga.data_mut()[idx(k)] = gv / inner as f64),
                    Reduce::Max | Reduce::Min => {
                        let target = out.data()[o];
                        let k = (0..inner).find(|&k| x.data()[idx(k)] == target).unwrap_or(0);
                        ga.data_mut()[idx(k)] = gv;
                    }
                }
            }
        }
    }
    ga
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn tape_is_consumed_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.square(x);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let l = tape.bce_with_logits_loss(x, Tensor::scalar(1.0)).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(x).unwrap().item(), 2.0);
    }
}
