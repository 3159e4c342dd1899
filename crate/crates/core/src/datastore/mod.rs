//! On-disk formats: JSONL record sets with a count-checked manifest, an
//! append-only label audit log, and PGM bundles for scenes and objects.

mod corpus;
mod jsonl;
mod pgm;
mod records;
mod world;

pub use corpus::{
    append_audit, merge_labels, read_audit, read_corpus, replay_audit, write_corpus, AuditEntry, Corpus, CorpusStore,
    LabelUpdate, Manifest, AUDIT_FILE, CORPUS_FILE, MANIFEST_FILE,
};
pub use jsonl::{config_hash, read_json, read_jsonl, write_json, write_jsonl};
pub use pgm::{read_binary_pgm, write_binary_pgm};
pub use records::{count_records, CompositeRecord, PairRecord, Source, Split};
pub use world::{read_world, write_world, DIFFUSION_FILE, PAIRS_FILE, WORLD_FILE};
