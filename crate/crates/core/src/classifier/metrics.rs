use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion-matrix summary at the argmax decision. Rates whose denominator
/// is zero are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl BinaryMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let n = tp + fp + tn + fn_;
        if n == 0 {
            return Err(Error::Undefined("no predictions to score".into()));
        }
        let tpr = ratio(tp, tp + fn_);
        let tnr = ratio(tn, tn + fp);
        Ok(Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: (tp + tn) as f64 / n as f64,
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            tpr,
            tnr,
            balanced_accuracy: tpr.zip(tnr).map(|(a, b)| (a + b) / 2.0),
        })
    }

    pub fn from_predictions(predicted: &[bool], actual: &[u8]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::shape("binary_metrics", format!("{} predictions for {} labels", predicted.len(), actual.len())));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    /// True when both classes were present, so every rate is defined.
    pub fn is_defined(&self) -> bool {
        self.balanced_accuracy.is_some()
    }
}
