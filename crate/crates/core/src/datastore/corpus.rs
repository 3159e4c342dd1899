use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use super::records::{count_records, CompositeRecord, Source};
use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// A named set of composite records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<CompositeRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub total: usize,
    /// Keyed `"<split>/<label>"`, see [`count_records`].
    pub counts: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.name.clone(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            total: self.records.len(),
            counts: count_records(&self.records),
        }
    }

    pub fn get(&self, id: &str) -> Option<&CompositeRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Writes `corpus.jsonl` and `manifest.json` into `dir`, creating it.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(CORPUS_FILE), &corpus.records)?;
    write_json(&dir.join(MANIFEST_FILE), &corpus.manifest())
}

/// Reads a corpus and checks the manifest against the recomputed counts.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let records: Vec<CompositeRecord> = read_jsonl(&dir.join(CORPUS_FILE))?;
    let corpus = Corpus { name: manifest.name.clone(), seed: manifest.seed, config_hash: manifest.config_hash.clone(), records };
    let actual = corpus.manifest();
    if actual.total != manifest.total {
        return Err(Error::ManifestMismatch(format!("manifest lists {} records, file has {}", manifest.total, actual.total)));
    }
    if actual.counts != manifest.counts {
        return Err(Error::ManifestMismatch(format!("manifest counts {:?}, file has {:?}", manifest.counts, actual.counts)));
    }
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelUpdate {
    pub id: String,
    pub label: u8,
}

/// One applied label change. The previous state is kept so the log alone
/// documents provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub time_ms: u64,
    pub id: String,
    pub label: u8,
    pub prev_label: Option<u8>,
    pub prev_source: Source,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Applies `updates` in order (later updates to the same id win), marking
/// each touched record as human-labeled. All ids are checked before anything
/// changes. Returns one audit entry per update, numbered from `first_seq`.
pub fn merge_labels(corpus: &mut Corpus, updates: &[LabelUpdate], first_seq: u64) -> Result<Vec<AuditEntry>> {
    let index: HashMap<&str, usize> = corpus.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut targets = Vec::with_capacity(updates.len());
    for u in updates {
        if u.label > 1 {
            return Err(Error::InvalidArgument(format!("label for {} must be 0 or 1, got {}", u.id, u.label)));
        }
        targets.push(*index.get(u.id.as_str()).ok_or_else(|| Error::UnknownRecord(u.id.clone()))?);
    }
    let time_ms = now_ms();
    let mut entries = Vec::with_capacity(updates.len());
    for (k, (u, i)) in updates.iter().zip(targets).enumerate() {
        let rec = &mut corpus.records[i];
        entries.push(AuditEntry {
            seq: first_seq + k as u64,
            time_ms,
            id: u.id.clone(),
            label: u.label,
            prev_label: rec.label,
            prev_source: rec.source,
        });
        rec.label = Some(u.label);
        rec.source = Source::Human;
    }
    Ok(entries)
}

/// Re-applies an audit log to the corpus it started from.
pub fn replay_audit(base: &Corpus, audit: &[AuditEntry]) -> Result<Corpus> {
    let mut out = base.clone();
    let mut entries = audit.to_vec();
    entries.sort_by_key(|e| e.seq);
    let updates: Vec<LabelUpdate> = entries.into_iter().map(|e| LabelUpdate { id: e.id, label: e.label }).collect();
    merge_labels(&mut out, &updates, 0)?;
    Ok(out)
}

pub fn append_audit(path: &Path, entries: &[AuditEntry]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

/// Reads the audit log; a missing file is an empty log.
pub fn read_audit(path: &Path) -> Result<Vec<AuditEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

/// A corpus directory with its append-only audit log. Holds the single
/// writer; callers serialize access.
#[derive(Debug)]
pub struct CorpusStore {
    dir: PathBuf,
    corpus: Corpus,
    next_seq: u64,
}

impl CorpusStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let corpus = read_corpus(dir)?;
        let next_seq = last_seq(&dir.join(AUDIT_FILE))?.map_or(0, |s| s + 1);
        Ok(Self { dir: dir.to_path_buf(), corpus, next_seq })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join(AUDIT_FILE)
    }

    /// Merges labels, appends and syncs the audit entries, then rewrites the
    /// corpus and manifest.
    pub fn merge(&mut self, updates: &[LabelUpdate]) -> Result<Vec<AuditEntry>> {
        let mut next = self.corpus.clone();
        let entries = merge_labels(&mut next, updates, self.next_seq)?;
        append_audit(&self.audit_path(), &entries)?;
        write_corpus(&self.dir, &next)?;
        self.corpus = next;
        self.next_seq += entries.len() as u64;
        Ok(entries)
    }

    /// Appends unlabeled or oracle records (e.g. fresh sampler output).
    pub fn append_records(&mut self, records: Vec<CompositeRecord>) -> Result<()> {
        let mut next = self.corpus.clone();
        for r in &records {
            if next.get(&r.id).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate record id {}", r.id)));
            }
        }
        next.records.extend(records);
        write_corpus(&self.dir, &next)?;
        self.corpus = next;
        Ok(())
    }
}

fn last_seq(path: &Path) -> Result<Option<u64>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut last = None;
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: AuditEntry = serde_json::from_str(&line).map_err(|e| Error::Corrupt { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        last = Some(last.map_or(e.seq, |s: u64| s.max(e.seq)));
    }
    Ok(last)
}
