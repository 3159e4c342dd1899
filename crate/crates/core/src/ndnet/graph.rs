//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the ids of its inputs.
//! [`Graph::backward`] walks the tape in reverse, accumulating gradients only
//! along nodes that depend on a leaf created with `requires_grad = true`.

use std::sync::Arc;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation implemented outside this module.
///
/// `backward` receives the input values, the forward output and the upstream
/// gradient, and returns one gradient per input (same shapes as the inputs).
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &Tensor<T>) -> Vec<Tensor<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Arc<Tensor<T>>),
    Affine(NodeId, T),
    Relu(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    AvgPool { input: NodeId, channels: usize, height: usize, width: usize, grid: usize },
    LogSoftmax(NodeId),
    Pick(NodeId, Vec<usize>),
    CrossEntropy2 { logits: NodeId, labels: Vec<u8>, weights: [T; 2] },
    Custom(Vec<NodeId>, Box<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn check(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.nodes.get(id.0).map(|n| &n.value).ok_or(Error::UnknownNode(id.0))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Gradients are reported for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = Tensor::new(vec![m, n], tensor::matmul(av.data(), bv.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a `[n]` bias to every row of a `[m,n]` tensor.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.check(x)?, self.check(bias)?);
        if xv.cols() != bv.len() {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.clone();
        tensor::add_row_bias(out.data_mut(), bv.data());
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant of equal length.
    pub fn mul_const(&mut self, a: NodeId, c: Arc<Tensor<T>>) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.len() != c.len() {
            return Err(Error::shape("mul_const", format!("{:?} vs {:?}", av.shape(), c.shape())));
        }
        let data = av.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    /// `scale · x + offset`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: T, offset: T) -> Result<NodeId> {
        let out = self.check(a)?.map(|x| scale * x + offset);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Affine(a, scale), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        self.affine(a, s, T::zero())
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let mut out = self.check(a)?.clone();
        tensor::relu_inplace(out.data_mut());
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Relu(a), rg))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.check(a)?.map(|x| x * x);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Square(a), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.data().iter().copied().sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.check(a)?.len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Concatenates `[m, n_i]` tensors along columns (1-D inputs are rows of
    /// length `n_i`).
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let rows = self.check(parts[0])?.rows();
        for &p in parts {
            if self.check(p)?.rows() != rows {
                return Err(Error::shape("concat", "row counts differ"));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.check(a)?.clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Average-pools a `[channels, height, width]` stack onto a `grid × grid`
    /// lattice per channel and flattens the result to `[1, channels·grid²]`.
    /// Height and width must be multiples of `grid`.
    pub fn avg_pool(&mut self, a: NodeId, channels: usize, height: usize, width: usize, grid: usize) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.len() != channels * height * width || grid == 0 || height % grid != 0 || width % grid != 0 {
            return Err(Error::shape(
                "avg_pool",
                format!("{:?} as {channels}x{height}x{width} pooled to {grid}", av.shape()),
            ));
        }
        let data = avg_pool_forward(av.data(), channels, height, width, grid);
        let out = Tensor::new(vec![1, channels * grid * grid], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::AvgPool { input: a, channels, height, width, grid }, rg))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.check(a)?;
        let out = Tensor::new(av.shape().to_vec(), tensor::log_softmax_rows(av.data(), av.cols()))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Gathers flat element indices into a 1-D tensor.
    pub fn pick(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let av = self.check(a)?;
        if indices.iter().any(|&i| i >= av.len()) {
            return Err(Error::shape("pick", "index out of range"));
        }
        let data = indices.iter().map(|&i| av.data()[i]).collect();
        let out = Tensor::new(vec![indices.len()], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Pick(a, indices.to_vec()), rg))
    }

    /// Mean negative log-likelihood of a `[batch, 2]` logit tensor, with
    /// per-class weights (the weighted mean divides by the summed weights).
    pub fn cross_entropy_2class(&mut self, logits: NodeId, labels: &[u8], weights: Option<[T; 2]>) -> Result<NodeId> {
        let lv = self.check(logits)?;
        if lv.shape().len() != 2 || lv.shape()[1] != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy_2class",
                format!("logits {:?} with {} labels", lv.shape(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::shape("cross_entropy_2class", "empty batch"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        let weights = weights.unwrap_or([T::one(), T::one()]);
        let logp = tensor::log_softmax_rows(lv.data(), 2);
        let mut num = T::zero();
        let mut den = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let w = weights[l as usize];
            num += -w * logp[2 * i + l as usize];
            den += w;
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(num / den),
            Op::CrossEntropy2 { logits, labels: labels.to_vec(), weights },
            rg,
        ))
    }

    /// Records an externally implemented operation whose forward output has
    /// already been computed.
    pub fn custom(&mut self, inputs: &[NodeId], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Result<NodeId> {
        for &i in inputs {
            self.check(i)?;
        }
        let rg = self.rg(inputs);
        Ok(self.push(output, Op::Custom(inputs.to_vec(), op), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |id: NodeId, delta: Tensor<T>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(*a) {
                    let d = tensor::matmul_a_bt(g.data(), bv.data(), m, k, n);
                    acc(*a, Tensor::new(vec![m, k], d).expect("shape"));
                }
                if needs(*b) {
                    let d = tensor::matmul_at_b(av.data(), g.data(), m, k, n);
                    acc(*b, Tensor::new(vec![k, n], d).expect("shape"));
                }
            }
            Op::AddBias(x, b) => {
                if needs(*b) {
                    let n = g.cols();
                    let mut d = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (o, &v) in d.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, Tensor::new(self.value(*b).shape().to_vec(), d).expect("shape"));
                }
                acc(*x, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    acc(*a, g.zip_map(bv, |gv, y| gv * y));
                }
                if needs(*b) {
                    acc(*b, g.zip_map(av, |gv, x| gv * x));
                }
            }
            Op::MulConst(a, c) => {
                let d = g.data().iter().zip(c.data()).map(|(&gv, &cv)| gv * cv).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Affine(a, s) => {
                let s = *s;
                acc(*a, g.map(|v| v * s));
            }
            Op::Relu(a) => {
                acc(*a, g.zip_map(&node.value, |gv, y| if y > T::zero() { gv } else { T::zero() }));
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                acc(*a, g.zip_map(self.value(*a), |gv, x| two * x * gv));
            }
            Op::Sum(a) => {
                acc(*a, Tensor::full(self.value(*a).shape().to_vec(), g.item()));
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(pv.len());
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        acc(p, Tensor::new(pv.shape().to_vec(), d).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, g.clone().reshape(shape).expect("shape"));
            }
            Op::AvgPool { input, channels, height, width, grid } => {
                let d = avg_pool_backward(g.data(), *channels, *height, *width, *grid);
                acc(*input, Tensor::new(self.value(*input).shape().to_vec(), d).expect("shape"));
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax * rowsum(g)
                let cols = g.cols();
                let mut d = Vec::with_capacity(g.len());
                for (grow, yrow) in g.data().chunks(cols).zip(node.value.data().chunks(cols)) {
                    let s: T = grow.iter().copied().sum();
                    d.extend(grow.iter().zip(yrow).map(|(&gv, &y)| gv - y.exp() * s));
                }
                acc(*a, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Pick(a, indices) => {
                let av = self.value(*a);
                let mut d = Tensor::zeros(av.shape().to_vec());
                for (&i, &gv) in indices.iter().zip(g.data()) {
                    d.data_mut()[i] += gv;
                }
                acc(*a, d);
            }
            Op::CrossEntropy2 { logits, labels, weights } => {
                let lv = self.value(*logits);
                let logp = tensor::log_softmax_rows(lv.data(), 2);
                let den: T = labels.iter().map(|&l| weights[l as usize]).sum();
                let scale = g.item() / den;
                let mut d = Vec::with_capacity(lv.len());
                for (i, &l) in labels.iter().enumerate() {
                    let w = weights[l as usize] * scale;
                    for c in 0..2 {
                        let p = logp[2 * i + c].exp();
                        let onehot = if c == l as usize { T::one() } else { T::zero() };
                        d.push(w * (p - onehot));
                    }
                }
                acc(*logits, Tensor::new(lv.shape().to_vec(), d).expect("shape"));
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
                let ds = op.backward(&vals, &node.value, g);
                for (&i, d) in inputs.iter().zip(ds) {
                    acc(i, d);
                }
            }
        }
    }
}

pub(crate) fn avg_pool_forward<T: Scalar>(x: &[T], channels: usize, height: usize, width: usize, grid: usize) -> Vec<T> {
    let (bh, bw) = (height / grid, width / grid);
    let inv = T::one() / T::lit((bh * bw) as f64);
    let mut out = vec![T::zero(); channels * grid * grid];
    for c in 0..channels {
        for y in 0..height {
            let row = &x[(c * height + y) * width..(c * height + y + 1) * width];
            let gy = y / bh;
            for (xx, &v) in row.iter().enumerate() {
                out[(c * grid + gy) * grid + xx / bw] += v;
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    out
}

fn avg_pool_backward<T: Scalar>(g: &[T], channels: usize, height: usize, width: usize, grid: usize) -> Vec<T> {
    let (bh, bw) = (height / grid, width / grid);
    let inv = T::one() / T::lit((bh * bw) as f64);
    let mut out = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        for y in 0..height {
            let gy = y / bh;
            for xx in 0..width {
                out.push(g[(c * grid + gy) * grid + xx / bw] * inv);
            }
        }
    }
    out
}
