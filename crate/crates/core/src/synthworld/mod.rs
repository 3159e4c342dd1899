//! Procedural street-like scenes and the rule-based plausibility oracle used
//! to label placements without annotators.

mod corpus;
mod oracle;
mod world;

pub use corpus::{build_corpus, CorpusConfig, SceneEntry, SynthCorpus};
pub use oracle::{overlap_fraction, sample_positive_placement, OracleRule, Verdict, Violation};
pub use world::{gen_object, gen_object_library, gen_scene, ObjectEntry, ObjectKind, SceneSpec, WorldConfig, CHANNEL_NAMES, GROUND, OBSTACLE, SKY};
