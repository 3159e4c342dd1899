//! Plausibility classifiers used as guidance signals: a structural one that
//! judges a single composite and a relational one that judges a pair of
//! placements. Both expose log-probabilities differentiable in the placement.

mod metrics;
mod relational;
mod structural;
mod train;

pub use metrics::BinaryMetrics;
pub use relational::{cr_log_prob_positive, evaluate_pairs, train_cr, PairScore, RelClassifier};
pub use structural::{
    cs_log_prob_positive, evaluate_classifier, train_cs, BoundStruct, InputKind, Library, StructClassifier, StructMeta,
    StructScore, DEFAULT_GRID,
};
pub use train::{class_weights, ClassifierTrainConfig, TrainReport};
