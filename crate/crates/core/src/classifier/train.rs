use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::BinaryMetrics;
use crate::error::{Error, Result};
use crate::ndnet::{AdamState, Graph, Head, Mlp, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Weight classes inversely to their frequency.
    pub balance_classes: bool,
    /// L2 penalty coefficient added to weight-matrix gradients.
    pub weight_decay: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 100, lr: 1e-3, hidden: 64, seed: 0, balance_classes: true, weight_decay: 0.0 }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("epochs, batch_size and hidden must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr: must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// What training recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub class_weights: [f64; 2],
    pub train: BinaryMetrics,
    pub validation: Option<BinaryMetrics>,
}

/// `w_c = n / (2 n_c)`, so the weighted classes contribute equally.
pub fn class_weights(labels: &[u8]) -> Result<[f64; 2]> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass { positives: pos, negatives: neg });
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * neg as f64), n / (2.0 * pos as f64)])
}

pub(crate) fn predict_positive<T: Scalar>(mlp: &Mlp<T>, features: &Tensor<T>) -> Result<Vec<bool>> {
    let logits = mlp.predict(features)?;
    Ok(logits.data().chunks_exact(2).map(|l| l[1] > l[0]).collect())
}

/// Fits a fresh two-class MLP of the given widths with weighted
/// cross-entropy and Adam. Returns the network, per-epoch mean losses and
/// the class weights used.
pub(crate) fn fit<T: Scalar>(
    widths: &[usize],
    features: &Tensor<T>,
    labels: &[u8],
    cfg: &ClassifierTrainConfig,
) -> Result<(Mlp<T>, Vec<f64>, [f64; 2])> {
    cfg.validate()?;
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let weights = class_weights(labels)?;
    let used = if cfg.balance_classes { weights } else { [1.0, 1.0] };
    let tw = [T::lit(used[0]), T::lit(used[1])];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = Mlp::new(widths, Head::Logits2, &mut rng)?;
    let mut adam = AdamState::new(cfg.lr, &mlp.params());
    let (n, d) = (features.rows(), features.cols());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                data.extend_from_slice(features.row(i));
            }
            let batch_labels: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let x = g.leaf(Tensor::new(vec![chunk.len(), d], data)?, false);
            let nodes = mlp.forward(&mut g, x, true)?;
            let loss = g.cross_entropy_2class(nodes.output, &batch_labels, Some(tw))?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            let mut grads = g.backward(loss)?;
            let mut gs: Vec<Tensor<T>> = nodes
                .params
                .iter()
                .map(|&p| grads.take(p).ok_or_else(|| Error::NonFinite("missing parameter gradient".into())))
                .collect::<Result<_>>()?;
            if cfg.weight_decay > 0.0 {
                let wd = T::lit(cfg.weight_decay);
                // params alternate weight, bias; biases are not decayed
                for (g, w) in gs.iter_mut().zip(mlp.params()).step_by(2) {
                    *g = g.zip_map(w, |gi, wi| gi + wd * wi);
                }
            }
            adam.step(&mut mlp.params_mut(), &gs)?;
            total += value;
            batches += 1;
        }
        epoch_loss.push(total / batches as f64);
    }
    Ok((mlp, epoch_loss, weights))
}
