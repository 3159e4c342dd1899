use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffusion::Placement;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Oracle,
    Human,
    SimpleNegative,
    /// Emitted by a sampler and not yet judged.
    Model,
}

/// One (scene, object, placement) composite with its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeRecord {
    pub id: String,
    pub scene_id: String,
    pub object_id: String,
    pub placement: Placement<f64>,
    /// 1 = plausible, 0 = implausible, absent = unlabeled.
    pub label: Option<u8>,
    pub split: Split,
    pub source: Source,
}

/// Two placements of two objects in one scene with a relational label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub scene_id: String,
    pub object_a: String,
    pub object_b: String,
    pub a: Placement<f64>,
    pub b: Placement<f64>,
    pub label: u8,
    pub split: Split,
}

/// Record counts keyed `"<split>/<label>"` with label `0`, `1` or
/// `unlabeled`.
pub fn count_records(records: &[CompositeRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        let split = match r.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let label = r.label.map_or_else(|| "unlabeled".to_string(), |l| l.to_string());
        *counts.entry(format!("{split}/{label}")).or_insert(0) += 1;
    }
    counts
}
