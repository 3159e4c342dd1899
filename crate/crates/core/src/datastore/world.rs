use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{read_corpus, write_corpus, Corpus};
use super::jsonl::{config_hash, read_json, read_jsonl, write_json, write_jsonl};
use super::pgm::{read_binary_pgm, write_binary_pgm};
use super::records::{CompositeRecord, PairRecord, Split};
use crate::compose::{ObjectMask, SceneLayout};
use crate::error::{Error, Result};
use crate::synthworld::{CorpusConfig, ObjectEntry, ObjectKind, SceneEntry, SceneSpec, SynthCorpus};

pub const WORLD_FILE: &str = "world.json";
pub const DIFFUSION_FILE: &str = "diffusion.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WorldManifest {
    config: CorpusConfig,
    config_hash: String,
    scenes: usize,
    objects: usize,
    diffusion: usize,
    pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SceneMeta {
    id: String,
    split: Split,
    horizon: f64,
    obstacles: Vec<[f64; 4]>,
    width: usize,
    height: usize,
    channel_names: Vec<String>,
    descriptor: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ObjectMeta {
    id: String,
    kind: ObjectKind,
    resolution: usize,
    /// Tight extent in canonical coordinates, for consumers that skip the PGM.
    bbox: [f64; 4],
}

/// Persists a generated world: the classifier set as the main corpus, the
/// diffusion and pair sets alongside it, and scenes / objects as PGM bundles.
pub fn write_world(dir: &Path, world: &SynthCorpus) -> Result<()> {
    let hash = config_hash(&world.config)?;
    let classifier = Corpus {
        name: "classifier".to_string(),
        seed: world.config.seed,
        config_hash: hash.clone(),
        records: world.classifier.clone(),
    };
    write_corpus(dir, &classifier)?;
    write_jsonl(&dir.join(DIFFUSION_FILE), &world.diffusion)?;
    write_jsonl(&dir.join(PAIRS_FILE), &world.pairs)?;

    let scenes_dir = dir.join("scenes");
    fs::create_dir_all(&scenes_dir)?;
    let mut metas = Vec::with_capacity(world.scenes.len());
    for s in &world.scenes {
        let l = &s.layout;
        for (name, ch) in l.channel_names.iter().zip(&l.channels) {
            write_binary_pgm(&scenes_dir.join(format!("{}_{name}.pgm", s.spec.id)), l.width, l.height, ch)?;
        }
        metas.push(SceneMeta {
            id: s.spec.id.clone(),
            split: s.split,
            horizon: s.spec.horizon,
            obstacles: s.spec.obstacles.clone(),
            width: l.width,
            height: l.height,
            channel_names: l.channel_names.clone(),
            descriptor: l.descriptor.clone(),
        });
    }
    write_json(&scenes_dir.join("manifest.json"), &metas)?;

    let objects_dir = dir.join("objects");
    fs::create_dir_all(&objects_dir)?;
    for o in &world.objects {
        let r = o.mask.resolution;
        write_binary_pgm(&objects_dir.join(format!("{}.pgm", o.id)), r, r, &o.mask.grid)?;
        write_json(&objects_dir.join(format!("{}.json", o.id)), &ObjectMeta { id: o.id.clone(), kind: o.kind, resolution: r, bbox: o.mask.bbox })?;
    }

    write_json(
        &dir.join(WORLD_FILE),
        &WorldManifest {
            config: world.config.clone(),
            config_hash: hash,
            scenes: world.scenes.len(),
            objects: world.objects.len(),
            diffusion: world.diffusion.len(),
            pairs: world.pairs.len(),
        },
    )
}

pub fn read_world(dir: &Path) -> Result<SynthCorpus> {
    let wm: WorldManifest = read_json(&dir.join(WORLD_FILE))?;
    if config_hash(&wm.config)? != wm.config_hash {
        return Err(Error::ManifestMismatch("config hash does not match config".into()));
    }
    let classifier = read_corpus(dir)?;
    if classifier.config_hash != wm.config_hash {
        return Err(Error::ManifestMismatch("corpus was generated from a different config".into()));
    }
    let diffusion: Vec<CompositeRecord> = read_jsonl(&dir.join(DIFFUSION_FILE))?;
    let pairs: Vec<PairRecord> = read_jsonl(&dir.join(PAIRS_FILE))?;

    let scenes_dir = dir.join("scenes");
    let metas: Vec<SceneMeta> = read_json(&scenes_dir.join("manifest.json"))?;
    let mut scenes = Vec::with_capacity(metas.len());
    for m in metas {
        let mut channels = Vec::with_capacity(m.channel_names.len());
        for name in &m.channel_names {
            let (w, h, px) = read_binary_pgm(&scenes_dir.join(format!("{}_{name}.pgm", m.id)))?;
            if (w, h) != (m.width, m.height) {
                return Err(Error::ManifestMismatch(format!("scene {} channel {name} is {w}x{h}", m.id)));
            }
            channels.push(px);
        }
        let layout = SceneLayout::new(m.width, m.height, m.channel_names, channels, m.descriptor)?;
        scenes.push(SceneEntry { spec: SceneSpec { id: m.id, horizon: m.horizon, obstacles: m.obstacles }, layout, split: m.split });
    }

    let objects_dir = dir.join("objects");
    let mut objects = Vec::with_capacity(wm.objects);
    for k in 0..wm.objects {
        let id = format!("object-{k:02}");
        let meta: ObjectMeta = read_json(&objects_dir.join(format!("{id}.json")))?;
        let (w, h, grid) = read_binary_pgm(&objects_dir.join(format!("{id}.pgm")))?;
        if w != meta.resolution || h != meta.resolution {
            return Err(Error::ManifestMismatch(format!("object {id} is {w}x{h}")));
        }
        let mask = ObjectMask::new(meta.resolution, grid)?;
        if mask.bbox != meta.bbox {
            return Err(Error::ManifestMismatch(format!("object {id} extent disagrees with its mask")));
        }
        objects.push(ObjectEntry { id: meta.id, kind: meta.kind, mask });
    }

    let found = (scenes.len(), diffusion.len(), pairs.len());
    if found != (wm.scenes, wm.diffusion, wm.pairs) {
        return Err(Error::ManifestMismatch(format!(
            "world manifest lists (scenes, diffusion, pairs) = ({}, {}, {}), found {found:?}",
            wm.scenes, wm.diffusion, wm.pairs
        )));
    }
    Ok(SynthCorpus { config: wm.config, scenes, objects, diffusion, classifier: classifier.records, pairs })
}
