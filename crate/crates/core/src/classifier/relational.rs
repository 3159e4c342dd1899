use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::BinaryMetrics;
use super::train::{fit, predict_positive, ClassifierTrainConfig, TrainReport};
use crate::datastore::PairRecord;
use crate::error::{Error, Result};
use crate::ndnet::checkpoint::{read_checkpoint, write_checkpoint};
use crate::ndnet::{Graph, Mlp, Tensor};
use crate::scalar::Scalar;

/// Relational classifier over two concatenated placements `[a ‖ b]`.
/// The pair order matters; no symmetry is imposed.
#[derive(Clone, Debug)]
pub struct RelClassifier<T> {
    mlp: Mlp<T>,
    report: Option<TrainReport>,
}

#[derive(Serialize, Deserialize)]
struct RelMeta {
    report: Option<TrainReport>,
}

/// Differentiable log-probability that a pair of placements is plausible.
pub trait PairScore<T>: Sync {
    /// `log p(plausible | xa, xb)` and its gradients with respect to both.
    fn log_prob_and_grad(&self, xa: [T; 3], xb: [T; 3]) -> Result<(T, [T; 3], [T; 3])>;
}

impl<T: Scalar> RelClassifier<T> {
    pub fn from_mlp(mlp: Mlp<T>) -> Result<Self> {
        if mlp.in_dim() != 6 || mlp.out_dim() != 2 {
            return Err(Error::shape("rel_classifier", format!("network {:?} must map 6 inputs to 2 logits", mlp.widths())));
        }
        Ok(Self { mlp, report: None })
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn report(&self) -> Option<&TrainReport> {
        self.report.as_ref()
    }

    pub fn prob_positive(&self, xa: [T; 3], xb: [T; 3]) -> Result<T> {
        let input = Tensor::new(vec![1, 6], [xa, xb].concat())?;
        Ok(self.mlp.predict_proba(&input)?.data()[1])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "kind": "rel-classifier", "meta": RelMeta { report: self.report.clone() } });
        write_checkpoint(BufWriter::new(File::create(path)?), &self.mlp, &meta)?;
        std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mlp, meta) = read_checkpoint(BufReader::new(File::open(path)?))?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("rel-classifier") {
            return Err(Error::Checkpoint(format!("{} is not a relational classifier", path.display())));
        }
        let m: RelMeta = serde_json::from_value(meta["meta"].clone())?;
        let mut cr = Self::from_mlp(mlp)?;
        cr.report = m.report;
        Ok(cr)
    }
}

impl<T: Scalar> PairScore<T> for RelClassifier<T> {
    fn log_prob_and_grad(&self, xa: [T; 3], xb: [T; 3]) -> Result<(T, [T; 3], [T; 3])> {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![1, 3], xa.to_vec())?, true);
        let b = g.leaf(Tensor::new(vec![1, 3], xb.to_vec())?, true);
        let input = g.concat(&[a, b])?;
        let out = self.mlp.forward(&mut g, input, false)?;
        let lp = g.log_softmax(out.output)?;
        let pos = g.pick(lp, &[1])?;
        let value = g.value(pos).item();
        let grads = g.backward(pos)?;
        let grab = |id| grads.get(id).map_or([T::zero(); 3], |t: &Tensor<T>| [t.data()[0], t.data()[1], t.data()[2]]);
        Ok((value, grab(a), grab(b)))
    }
}

pub fn cr_log_prob_positive<T: Scalar>(cr: &RelClassifier<T>, xa: [T; 3], xb: [T; 3]) -> Result<(T, [T; 3], [T; 3])> {
    cr.log_prob_and_grad(xa, xb)
}

fn pair_matrix<T: Scalar>(pairs: &[PairRecord]) -> Result<Tensor<T>> {
    let data = pairs.iter().flat_map(|p| [p.a.to_array(), p.b.to_array()].concat()).map(T::lit).collect();
    Tensor::new(vec![pairs.len(), 6], data)
}

/// Trains a relational classifier (four fully connected layers) on labeled
/// placement pairs.
pub fn train_cr<T: Scalar>(pairs: &[PairRecord], validation: &[PairRecord], cfg: &ClassifierTrainConfig) -> Result<RelClassifier<T>> {
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let features = pair_matrix::<T>(pairs)?;
    let h = cfg.hidden;
    let (mlp, epoch_loss, class_weights) = fit(&[6, h, h, h, 2], &features, &labels, cfg)?;
    let train = BinaryMetrics::from_predictions(&predict_positive(&mlp, &features)?, &labels)?;
    let mut cr = RelClassifier::from_mlp(mlp)?;
    let validation = if validation.is_empty() { None } else { Some(evaluate_pairs(&cr, validation)?) };
    cr.report = Some(TrainReport { epoch_loss, class_weights, train, validation });
    Ok(cr)
}

pub fn evaluate_pairs<T: Scalar>(cr: &RelClassifier<T>, pairs: &[PairRecord]) -> Result<BinaryMetrics> {
    if pairs.is_empty() {
        return Err(Error::Undefined("empty evaluation set".into()));
    }
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    BinaryMetrics::from_predictions(&predict_positive(&cr.mlp, &pair_matrix::<T>(pairs)?)?, &labels)
}
