use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Linear,
    /// Two-class logits; pair with a log-softmax or cross-entropy.
    Logits2,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        (tag == 1).then_some(Activation::Relu)
    }
}

impl Head {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Head::Linear => 0,
            Head::Logits2 => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Head::Linear),
            1 => Some(Head::Logits2),
            _ => None,
        }
    }
}

/// Fully connected network with ReLU between layers and no activation after
/// the last one. Weights are stored `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
    activation: Activation,
    head: Head,
}

/// Node ids produced by [`Mlp::forward`].
pub struct MlpNodes {
    pub output: NodeId,
    /// Weight and bias leaves, interleaved in layer order.
    pub params: Vec<NodeId>,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {widths:?}")));
        }
        if head == Head::Logits2 && widths[widths.len() - 1] != 2 {
            return Err(Error::InvalidArgument("2-class head needs output width 2".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], data)?);
            biases.push(Tensor::zeros(vec![fan_out]));
        }
        Ok(Self { widths: widths.to_vec(), weights, biases, activation: Activation::Relu, head })
    }

    pub fn from_parts(widths: Vec<usize>, params: Vec<Tensor<T>>, activation: Activation, head: Head) -> Result<Self> {
        if widths.len() < 2 || params.len() != 2 * (widths.len() - 1) {
            return Err(Error::InvalidArgument("parameter count does not match widths".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, pair) in params.chunks(2).enumerate() {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            if pair[0].shape() != [fan_in, fan_out] || pair[1].shape() != [fan_out] {
                return Err(Error::shape("mlp", format!("layer {i} parameters have wrong shape")));
            }
            weights.push(pair[0].clone());
            biases.push(pair[1].clone());
        }
        Ok(Self { widths, weights, biases, activation, head })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    /// Parameters interleaved as weight, bias per layer.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.in_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!("input {:?}, expected [batch, {}]", x.shape(), self.in_dim()),
            ));
        }
        Ok(())
    }

    /// Records the forward pass. With `train` set, parameter leaves require
    /// gradients; otherwise only gradients w.r.t. the input flow.
    pub fn forward(&self, g: &mut Graph<T>, input: NodeId, train: bool) -> Result<MlpNodes> {
        self.check_input(g.value(input))?;
        let mut params = Vec::with_capacity(2 * self.weights.len());
        let mut h = input;
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wid = g.leaf(w.clone(), train);
            let bid = g.leaf(b.clone(), train);
            params.push(wid);
            params.push(bid);
            h = g.matmul(h, wid)?;
            h = g.add_bias(h, bid)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => g.relu(h)?,
                };
            }
        }
        Ok(MlpNodes { output: h, params })
    }

    /// Forward pass without recording. Produces the same bits as
    /// [`Mlp::forward`].
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let m = input.rows();
        let mut h = input.data().to_vec();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (k, n) = (w.shape()[0], w.shape()[1]);
            h = tensor::matmul(&h, w.data(), m, k, n);
            tensor::add_row_bias(&mut h, b.data());
            if i < last {
                tensor::relu_inplace(&mut h);
            }
        }
        Tensor::new(vec![m, self.out_dim()], h)
    }

    /// Row-wise class probabilities for a two-class head.
    pub fn predict_proba(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if self.head != Head::Logits2 {
            return Err(Error::InvalidArgument("predict_proba needs a 2-class head".into()));
        }
        let logits = self.predict(input)?;
        let lp = tensor::log_softmax_rows(logits.data(), 2);
        Tensor::new(logits.shape().to_vec(), lp.into_iter().map(T::exp).collect())
    }
}
