use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::oracle::sample_positive_placement;
use super::world::{gen_object_library, gen_scene, ObjectEntry, SceneSpec, WorldConfig};
use crate::compose::SceneLayout;
use crate::datastore::{CompositeRecord, PairRecord, Source, Split};
use crate::diffusion::Placement;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_scenes: usize,
    pub n_objects: usize,
    pub test_fraction: f64,
    /// Clean positives per (train scene, object) for the diffusion set.
    pub diffusion_per_pair: usize,
    /// Labeled composites per (scene, object).
    pub classifier_per_pair: usize,
    /// Requested positive share of the classifier set.
    pub positive_fraction: f64,
    /// Share of negatives drawn as gross uniform-random violations.
    pub simple_negative_fraction: f64,
    /// Std-dev of the jitter applied to borrowed placements.
    pub proposal_jitter: f64,
    pub pairs_per_scene: usize,
    pub world: WorldConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_scenes: 60,
            n_objects: 3,
            test_fraction: 0.2,
            diffusion_per_pair: 12,
            classifier_per_pair: 40,
            positive_fraction: 0.4,
            simple_negative_fraction: 0.2,
            proposal_jitter: 0.05,
            pairs_per_scene: 30,
            world: WorldConfig::default(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidArgument(format!("{field}: {why}")));
        if self.n_scenes == 0 {
            return bad("n_scenes", "must be positive");
        }
        if self.n_objects == 0 {
            return bad("n_objects", "must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("positive_fraction", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.simple_negative_fraction) {
            return bad("simple_negative_fraction", "must lie in [0, 1]");
        }
        if !(self.proposal_jitter >= 0.0) {
            return bad("proposal_jitter", "must be non-negative");
        }
        self.world.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub spec: SceneSpec,
    pub layout: SceneLayout,
    pub split: Split,
}

/// Everything generated for one synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub config: CorpusConfig,
    pub scenes: Vec<SceneEntry>,
    pub objects: Vec<ObjectEntry>,
    /// Clean oracle-positive placements (train scenes only).
    pub diffusion: Vec<CompositeRecord>,
    /// Labeled composites for the structural classifier.
    pub classifier: Vec<CompositeRecord>,
    pub pairs: Vec<PairRecord>,
}

impl SynthCorpus {
    pub fn scene(&self, id: &str) -> Option<&SceneEntry> {
        self.scenes.iter().find(|s| s.spec.id == id)
    }

    pub fn object(&self, id: &str) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn scenes_in(&self, split: Split) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |s| s.split == split)
    }
}

/// Independent random stream `index` for generation stage `stage`.
fn stream(seed: u64, stage: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage << 32 | index);
    rng
}

const STAGE_OBJECTS: u64 = 1;
const STAGE_SCENES: u64 = 2;
const STAGE_DIFFUSION: u64 = 3;
const STAGE_CLASSIFIER: u64 = 4;
const STAGE_PAIRS: u64 = 5;

/// Uniform placement that grossly misses the plausible region.
fn simple_negative<R: Rng + ?Sized>(rng: &mut R) -> Placement<f64> {
    Placement::new(rng.random_range(0.02..0.9), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn jitter<R: Rng + ?Sized>(p: Placement<f64>, sd: f64, rng: &mut R) -> Placement<f64> {
    if sd == 0.0 {
        return p;
    }
    let n = Normal::new(0.0, sd).expect("valid sd");
    Placement::new((p.s + n.sample(rng)).max(0.01), p.v + n.sample(rng), p.h + n.sample(rng))
}

/// Generates scenes, objects and the three record sets.
///
/// Scenes are split into train and test wholesale. Classifier proposals mimic
/// an unconditional placement model: a positive placement from a random
/// *other* scene, jittered, then judged by the oracle in this scene.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let rule = &cfg.world.oracle;
    let objects = gen_object_library(cfg.n_objects, cfg.world.object_resolution, &mut stream(cfg.seed, STAGE_OBJECTS, 0))?;

    let n_test = ((cfg.n_scenes as f64) * cfg.test_fraction).round() as usize;
    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    for k in 0..cfg.n_scenes {
        let (spec, layout) = gen_scene(&format!("scene-{k:04}"), &cfg.world, &mut stream(cfg.seed, STAGE_SCENES, k as u64))?;
        let split = if k >= cfg.n_scenes - n_test { Split::Test } else { Split::Train };
        scenes.push(SceneEntry { spec, layout, split });
    }

    let mut diffusion = Vec::new();
    // positives per scene and object, shared as proposal sources below
    let mut pool: Vec<Vec<Vec<Placement<f64>>>> = Vec::with_capacity(scenes.len());
    let mut feasible = vec![true; scenes.len()];
    for (k, scene) in scenes.iter().enumerate() {
        let mut rng = stream(cfg.seed, STAGE_DIFFUSION, k as u64);
        let mut per_object = Vec::with_capacity(objects.len());
        for obj in &objects {
            let mut ps = Vec::with_capacity(cfg.diffusion_per_pair);
            for _ in 0..cfg.diffusion_per_pair.max(1) {
                match sample_positive_placement(rule, &scene.spec, &obj.mask, &mut rng) {
                    Ok(p) => ps.push(p),
                    Err(_) => {
                        log::warn!("scene {} infeasible for {}; skipped", scene.spec.id, obj.id);
                        feasible[k] = false;
                        break;
                    }
                }
            }
            per_object.push(ps);
        }
        if feasible[k] && scene.split == Split::Train {
            for (obj, ps) in objects.iter().zip(&per_object) {
                for p in ps.iter().take(cfg.diffusion_per_pair) {
                    diffusion.push(CompositeRecord {
                        id: format!("d-{:06}", diffusion.len()),
                        scene_id: scene.spec.id.clone(),
                        object_id: obj.id.clone(),
                        placement: *p,
                        label: Some(1),
                        split: Split::Train,
                        source: Source::Oracle,
                    });
                }
            }
        }
        pool.push(per_object);
    }

    let donors: Vec<usize> = (0..scenes.len()).filter(|&k| feasible[k] && scenes[k].split == Split::Train).collect();
    let mut classifier = Vec::new();
    let mut pairs = Vec::new();
    for (k, scene) in scenes.iter().enumerate() {
        if !feasible[k] || donors.is_empty() {
            continue;
        }
        let mut rng = stream(cfg.seed, STAGE_CLASSIFIER, k as u64);
        for (oi, obj) in objects.iter().enumerate() {
            let want_pos = (cfg.classifier_per_pair as f64 * cfg.positive_fraction).round() as usize;
            let want_neg = cfg.classifier_per_pair - want_pos;
            let want_simple = (want_neg as f64 * cfg.simple_negative_fraction).round() as usize;
            let (mut pos, mut neg, mut simple) = (Vec::new(), Vec::new(), Vec::new());
            let mut tries = 0;
            while (pos.len() < want_pos || neg.len() < want_neg - want_simple) && tries < 200 * cfg.classifier_per_pair {
                tries += 1;
                let donor = *donors.choose(&mut rng).expect("donors");
                if donor == k && donors.len() > 1 {
                    continue;
                }
                let base = *pool[donor][oi].choose(&mut rng).expect("pool");
                let p = jitter(base, cfg.proposal_jitter, &mut rng);
                if rule.label(&scene.spec, &obj.mask, p).label {
                    if pos.len() < want_pos {
                        pos.push(p);
                    }
                } else if neg.len() < want_neg - want_simple {
                    neg.push(p);
                }
            }
            // top up positives from this scene's own feasible set
            while pos.len() < want_pos {
                pos.push(sample_positive_placement(rule, &scene.spec, &obj.mask, &mut rng)?);
            }
            while simple.len() < want_simple + (want_neg - want_simple - neg.len()) {
                let p = simple_negative(&mut rng);
                if !rule.label(&scene.spec, &obj.mask, p).label {
                    simple.push(p);
                }
            }
            let labeled = pos
                .into_iter()
                .map(|p| (p, 1u8, Source::Oracle))
                .chain(neg.into_iter().map(|p| (p, 0u8, Source::Oracle)))
                .chain(simple.into_iter().map(|p| (p, 0u8, Source::SimpleNegative)));
            for (p, label, source) in labeled {
                classifier.push(CompositeRecord {
                    id: format!("c-{:06}", classifier.len()),
                    scene_id: scene.spec.id.clone(),
                    object_id: obj.id.clone(),
                    placement: p,
                    label: Some(label),
                    split: scene.split,
                    source,
                });
            }
        }

        let mut rng = stream(cfg.seed, STAGE_PAIRS, k as u64);
        for _ in 0..cfg.pairs_per_scene {
            let ia = rng.random_range(0..objects.len());
            let ib = rng.random_range(0..objects.len());
            let a = sample_positive_placement(rule, &scene.spec, &objects[ia].mask, &mut rng)?;
            let b = if rng.random_bool(0.5) {
                sample_positive_placement(rule, &scene.spec, &objects[ib].mask, &mut rng)?
            } else {
                // near-duplicate of a: overlapping or mis-ordered
                jitter(Placement::new(a.s * rng.random_range(0.6..1.5), a.v, a.h), 0.08, &mut rng)
            };
            let label = rule.pair_label((&objects[ia].mask, a), (&objects[ib].mask, b));
            pairs.push(PairRecord {
                id: format!("p-{:06}", pairs.len()),
                scene_id: scene.spec.id.clone(),
                object_a: objects[ia].id.clone(),
                object_b: objects[ib].id.clone(),
                a,
                b,
                label: u8::from(label),
                split: scene.split,
            });
        }
    }

    Ok(SynthCorpus { config: cfg.clone(), scenes, objects, diffusion, classifier, pairs })
}
