use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use diffpop::classifier::{train_cr, train_cs, InputKind, Library, PairScore, RelClassifier, StructClassifier, StructScore};
use diffpop::datastore::{
    read_jsonl, read_world, write_json, write_jsonl, write_world, CompositeRecord, CorpusStore, Source, Split, MANIFEST_FILE,
    WORLD_FILE,
};
use diffpop::diffusion::{sample_unguided, train_unguided, DiffusionNet, Placement};
use diffpop::guidance::{sample_guided, sample_multi, sweep_lambda, task_seed, write_sweep_csv, GuidanceConfig, SweepTask};
use diffpop::metrics::{accuracy, diversity_deltas, frechet_placement_distance, MetricsReport};
use diffpop::synthworld::{build_corpus, sample_positive_placement, SceneEntry, SynthCorpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_grid, RunConfig};
use crate::exit::{environment, usage};
use crate::{
    AblateLambda, ClassifierFlags, Cli, Command, Evaluate, GenData, ImportSamples, Judge, Sample, Serve, SplitArg, TrainCr, TrainCs,
    TrainDiffusion, Variant,
};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cfg.resolve_seed(cli.seed)?;
    match cli.command {
        Command::GenData(a) => gen_data(cfg, seed, a),
        Command::TrainDiffusion(a) => train_diffusion(cfg, seed, a),
        Command::TrainCs(a) => train_structural(cfg, seed, a),
        Command::TrainCr(a) => train_relational(cfg, seed, a),
        Command::Sample(a) => sample(cfg, seed, a),
        Command::ImportSamples(a) => import_samples(a),
        Command::Evaluate(a) => evaluate(cfg, seed, a),
        Command::AblateLambda(a) => ablate(cfg, seed, a),
        Command::Serve(a) => serve(cfg, a),
    }
}

/// Written next to every output so a run can be repeated from it alone.
#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a C,
    inputs: serde_json::Value,
}

fn write_manifest<C: Serialize>(path: &Path, command: &str, seed: u64, config: &C, inputs: serde_json::Value) -> Result<()> {
    let m = RunManifest { command, version: env!("CARGO_PKG_VERSION"), seed, config, inputs };
    write_json(path, &m).with_context(|| format!("writing {}", path.display()))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", out.display()))
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", p.display())))
    }
}

fn prepare_output(out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| environment(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(())
}

fn load_world(dir: &Path) -> Result<SynthCorpus> {
    require_file(&dir.join(WORLD_FILE), "corpus manifest")?;
    read_world(dir).with_context(|| format!("reading corpus {}", dir.display()))
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn gen_data(mut cfg: RunConfig, seed: u64, a: GenData) -> Result<()> {
    if let Some(n) = a.scenes {
        cfg.corpus.n_scenes = n;
    }
    if let Some(n) = a.objects {
        cfg.corpus.n_objects = n;
    }
    cfg.corpus.validate().map_err(|e| usage(format!("corpus config: {e}")))?;
    let world = build_corpus(&cfg.corpus)?;
    write_world(&a.out, &world).with_context(|| format!("writing {}", a.out.display()))?;
    write_manifest(&a.out.join("run-manifest.json"), "gen-data", seed, &cfg.corpus, serde_json::json!({}))?;
    println!(
        "wrote {} scenes, {} objects, {} diffusion / {} classifier / {} pair records to {}",
        world.scenes.len(),
        world.objects.len(),
        world.diffusion.len(),
        world.classifier.len(),
        world.pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn train_diffusion(mut cfg: RunConfig, seed: u64, a: TrainDiffusion) -> Result<()> {
    let d = &mut cfg.diffusion;
    d.epochs = a.epochs.unwrap_or(d.epochs);
    d.batch_size = a.batch.unwrap_or(d.batch_size);
    d.lr = a.lr.unwrap_or(d.lr);
    d.steps = a.steps.unwrap_or(d.steps);
    d.hidden = a.hidden.unwrap_or(d.hidden);
    if d.epochs == 0 || d.batch_size == 0 || d.steps == 0 || d.hidden == 0 {
        return Err(usage("epochs, batch, steps and hidden must be positive"));
    }
    if !(d.lr > 0.0 && d.lr.is_finite()) {
        return Err(usage(format!("lr: must be positive, got {}", d.lr)));
    }
    let world = load_world(&a.corpus)?;
    let data: Vec<Placement<f64>> = world.diffusion.iter().map(|r| r.placement).collect();
    if data.is_empty() {
        return Err(usage("corpus has no diffusion records"));
    }
    let (net, trace) = train_unguided::<f64>(&data, &cfg.diffusion)?;
    prepare_output(&a.out)?;
    net.save(BufWriter::new(File::create(&a.out)?))?;
    write_loss_csv(&sibling(&a.out, ".loss.csv"), &trace.epoch_loss)?;
    write_manifest(&sibling(&a.out, ".run.json"), "train-diffusion", seed, &cfg.diffusion, serde_json::json!({ "corpus": a.corpus }))?;
    println!("trained on {} placements; final loss {:.5}", data.len(), trace.epoch_loss.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn apply_classifier_flags(c: &mut diffpop::classifier::ClassifierTrainConfig, f: &ClassifierFlags) -> Result<()> {
    c.epochs = f.epochs.unwrap_or(c.epochs);
    c.batch_size = f.batch.unwrap_or(c.batch_size);
    c.lr = f.lr.unwrap_or(c.lr);
    c.hidden = f.hidden.unwrap_or(c.hidden);
    c.validate().map_err(|e| usage(e.to_string()))
}

fn split_labeled(records: &[CompositeRecord]) -> (Vec<CompositeRecord>, Vec<CompositeRecord>) {
    records.iter().filter(|r| r.label.is_some()).cloned().partition(|r| r.split == Split::Train)
}

fn describe(report: Option<&diffpop::classifier::TrainReport>) -> String {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    match report {
        Some(r) => format!(
            "train balanced accuracy {}, held-out {}",
            fmt(r.train.balanced_accuracy),
            fmt(r.validation.as_ref().and_then(|v| v.balanced_accuracy))
        ),
        None => "no report".into(),
    }
}

fn train_structural(mut cfg: RunConfig, seed: u64, a: TrainCs) -> Result<()> {
    apply_classifier_flags(&mut cfg.classifier, &a.train)?;
    if a.grid == 0 {
        return Err(usage("grid must be positive"));
    }
    let kind = match a.variant {
        Variant::Layout => InputKind::MaskLayout,
        Variant::Descriptor => InputKind::MaskDescriptor,
    };
    let world = load_world(&a.corpus)?;
    let lib = Library::from_corpus(&world);
    let (train, test) = split_labeled(&world.classifier);
    if train.is_empty() {
        return Err(usage("corpus has no labeled training records"));
    }
    let cs = train_cs::<f64>(&lib, &train, &test, kind, a.grid, &cfg.classifier)?;
    prepare_output(&a.out)?;
    cs.save(&a.out)?;
    if let Some(r) = cs.report() {
        write_loss_csv(&sibling(&a.out, ".loss.csv"), &r.epoch_loss)?;
    }
    let inputs = serde_json::json!({ "corpus": a.corpus, "variant": kind, "grid": a.grid });
    write_manifest(&sibling(&a.out, ".run.json"), "train-cs", seed, &cfg.classifier, inputs)?;
    println!("structural classifier on {} records: {}", train.len(), describe(cs.report()));
    Ok(())
}

fn train_relational(mut cfg: RunConfig, seed: u64, a: TrainCr) -> Result<()> {
    apply_classifier_flags(&mut cfg.relational, &a.train)?;
    let world = load_world(&a.corpus)?;
    let (train, test): (Vec<_>, Vec<_>) = world.pairs.iter().cloned().partition(|p| p.split == Split::Train);
    if train.is_empty() {
        return Err(usage("corpus has no training pairs"));
    }
    let cr = train_cr::<f64>(&train, &test, &cfg.relational)?;
    prepare_output(&a.out)?;
    cr.save(&a.out)?;
    if let Some(r) = cr.report() {
        write_loss_csv(&sibling(&a.out, ".loss.csv"), &r.epoch_loss)?;
    }
    write_manifest(&sibling(&a.out, ".run.json"), "train-cr", seed, &cfg.relational, serde_json::json!({ "corpus": a.corpus }))?;
    println!("relational classifier on {} pairs: {}", train.len(), describe(cr.report()));
    Ok(())
}

/// One sampled placement. `run` counts chains within a task (single
/// object) or joint runs within a scene; `slot` is the object's position
/// within a joint run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: String,
    pub object_id: String,
    pub run: usize,
    pub slot: usize,
    pub placement: Placement<f64>,
}

/// Stands in for a classifier that was not loaded. Only reached if a
/// guidance scale is positive, which argument checks rule out.
struct NoClassifier;

impl StructScore<f64> for NoClassifier {
    fn log_prob_and_grad(&self, _: [f64; 3]) -> diffpop::Result<(f64, [f64; 3])> {
        Err(diffpop::Error::InvalidArgument("no structural classifier loaded".into()))
    }
}

impl PairScore<f64> for NoClassifier {
    fn log_prob_and_grad(&self, _: [f64; 3], _: [f64; 3]) -> diffpop::Result<(f64, [f64; 3], [f64; 3])> {
        Err(diffpop::Error::InvalidArgument("no relational classifier loaded".into()))
    }
}

fn load_diffusion(path: &Path) -> Result<DiffusionNet<f64>> {
    require_file(path, "diffusion checkpoint")?;
    DiffusionNet::load(BufReader::new(File::open(path)?)).with_context(|| format!("loading {}", path.display()))
}

fn load_cs(path: &Path) -> Result<StructClassifier<f64>> {
    require_file(path, "structural classifier")?;
    StructClassifier::load(path).with_context(|| format!("loading {}", path.display()))
}

fn pick_scenes<'a>(world: &'a SynthCorpus, ids: &[String], split: SplitArg) -> Result<Vec<&'a SceneEntry>> {
    if !ids.is_empty() {
        return ids.iter().map(|id| world.scene(id).ok_or_else(|| usage(format!("unknown scene {id}")))).collect();
    }
    let scenes: Vec<_> = world
        .scenes
        .iter()
        .filter(|s| match split {
            SplitArg::Train => s.split == Split::Train,
            SplitArg::Test => s.split == Split::Test,
            SplitArg::All => true,
        })
        .collect();
    if scenes.is_empty() {
        return Err(usage("no scenes selected"));
    }
    Ok(scenes)
}

fn pick_objects(world: &SynthCorpus, ids: &[String]) -> Result<Vec<String>> {
    if ids.is_empty() {
        return Ok(world.objects.iter().map(|o| o.id.clone()).collect());
    }
    for id in ids {
        world.object(id).ok_or_else(|| usage(format!("unknown object {id}")))?;
    }
    Ok(ids.to_vec())
}

fn sample(cfg: RunConfig, seed: u64, a: Sample) -> Result<()> {
    let n = a.n.unwrap_or(cfg.sample.n);
    let k = a.objects.unwrap_or(cfg.sample.objects);
    // A scale from the config file only applies when its classifier is given.
    let guidance = GuidanceConfig {
        lambda: a.lambda.unwrap_or(if a.cs.is_some() { cfg.guidance.lambda } else { 0.0 }),
        lambda_r: a.lambda_r.unwrap_or(if a.cr.is_some() { cfg.guidance.lambda_r } else { 0.0 }),
        seed,
    };
    guidance.validate().map_err(|e| usage(e.to_string()))?;
    if n == 0 || k == 0 {
        return Err(usage("--n and --objects must be positive"));
    }
    if guidance.lambda > 0.0 && a.cs.is_none() {
        return Err(usage("--lambda > 0 needs --cs"));
    }
    if k > 1 && guidance.lambda_r > 0.0 && a.cr.is_none() {
        return Err(usage("--lambda-r > 0 needs --cr"));
    }
    let world = load_world(&a.corpus)?;
    let lib = Library::from_corpus(&world);
    let net = load_diffusion(&a.diffusion)?;
    let cs = a.cs.as_deref().map(load_cs).transpose()?;
    let cr = match (&a.cr, k > 1) {
        (Some(p), true) => {
            require_file(p, "relational classifier")?;
            Some(RelClassifier::<f64>::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        _ => None,
    };
    let scenes = pick_scenes(&world, &a.scenes, a.split)?;
    let objects = pick_objects(&world, &a.objects_ids)?;
    let sched = net.schedule();

    let bind = |scene: &SceneEntry, obj: &str| -> Result<Box<dyn StructScore<f64> + '_>> {
        Ok(match &cs {
            Some(cs) => Box::new(cs.bind(&scene.layout, lib.object(obj)?.clone())?),
            None => Box::new(NoClassifier),
        })
    };

    let mut out = Vec::new();
    if k == 1 {
        let tasks = scenes.iter().flat_map(|s| objects.iter().map(move |o| (*s, o.as_str())));
        for (i, (scene, obj)) in tasks.enumerate() {
            let base = task_seed(seed, i);
            // Without a classifier this is the unguided baseline itself.
            let placements = match cs {
                None => sample_unguided(&net, sched, n, base)?,
                Some(_) => sample_guided(&net, bind(scene, obj)?.as_ref(), sched, guidance.lambda, n, base)?,
            };
            for (run, placement) in placements.into_iter().enumerate() {
                out.push(SampleRecord { scene_id: scene.spec.id.clone(), object_id: obj.to_string(), run, slot: 0, placement });
            }
        }
    } else {
        let rel: &dyn PairScore<f64> = match &cr {
            Some(cr) => cr,
            None => &NoClassifier,
        };
        for (si, scene) in scenes.iter().enumerate() {
            let ids: Vec<&str> = (0..k).map(|j| objects[j % objects.len()].as_str()).collect();
            let bound = ids.iter().map(|o| bind(scene, o)).collect::<Result<Vec<_>>>()?;
            let guides: Vec<&dyn StructScore<f64>> = bound.iter().map(|b| b.as_ref()).collect();
            for run in 0..n {
                // Object j of this run draws from seed base + j, so runs are spaced k apart.
                let run_cfg = GuidanceConfig { seed: task_seed(seed, si).wrapping_add((run * k) as u64), ..guidance.clone() };
                let (placements, _) = sample_multi(&net, &guides, rel, sched, &run_cfg)?;
                for (slot, (placement, obj)) in placements.into_iter().zip(&ids).enumerate() {
                    out.push(SampleRecord { scene_id: scene.spec.id.clone(), object_id: obj.to_string(), run, slot, placement });
                }
            }
        }
    }
    prepare_output(&a.out)?;
    write_jsonl(&a.out, &out)?;
    let inputs = serde_json::json!({
        "diffusion": a.diffusion, "corpus": a.corpus, "cs": a.cs, "cr": a.cr,
        "scenes": scenes.iter().map(|s| &s.spec.id).collect::<Vec<_>>(), "objects": objects, "n": n, "k": k,
    });
    write_manifest(&sibling(&a.out, ".run.json"), "sample", seed, &guidance, inputs)?;
    println!("wrote {} placements to {}", out.len(), a.out.display());
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    require_file(path, "sample file")?;
    let samples: Vec<SampleRecord> = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    if samples.is_empty() {
        return Err(usage(format!("{} contains no samples", path.display())));
    }
    Ok(samples)
}

fn import_samples(a: ImportSamples) -> Result<()> {
    let samples = read_samples(&a.samples)?;
    let world = load_world(&a.corpus)?;
    let mut store = CorpusStore::open(&a.corpus)?;
    let start = store.corpus().records.len();
    let records = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let scene = world.scene(&s.scene_id).ok_or_else(|| usage(format!("unknown scene {}", s.scene_id)))?;
            world.object(&s.object_id).ok_or_else(|| usage(format!("unknown object {}", s.object_id)))?;
            Ok(CompositeRecord {
                id: format!("sample-{:06}", start + i),
                scene_id: s.scene_id.clone(),
                object_id: s.object_id.clone(),
                placement: s.placement,
                label: None,
                split: scene.split,
                source: Source::Model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    store.append_records(records)?;
    println!("appended {} unlabeled records to {}", samples.len(), a.corpus.join(MANIFEST_FILE).display());
    Ok(())
}

/// Evaluation output: the fixed metric keys plus both judges' accuracy.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluateReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub judge: String,
    pub accuracy_oracle: f64,
    pub accuracy_cs: Option<f64>,
}

fn plausible_geometry(p: Placement<f64>) -> bool {
    p.is_finite() && p.s > 0.0
}

fn evaluate(cfg: RunConfig, seed: u64, a: Evaluate) -> Result<()> {
    let samples = read_samples(&a.samples)?;
    if a.judge == Judge::Cs && a.cs.is_none() {
        return Err(usage("--judge cs needs --cs"));
    }
    let reference_per_task = a.reference_per_task.unwrap_or(cfg.evaluate.reference_per_task);
    let world = load_world(&a.corpus)?;
    let cs = a.cs.as_deref().map(load_cs).transpose()?;
    let rule = &world.config.world.oracle;

    let mut groups: BTreeMap<(String, String), Vec<Placement<f64>>> = BTreeMap::new();
    let (mut by_oracle, mut by_cs) = (Vec::new(), Vec::new());
    for s in &samples {
        let scene = world.scene(&s.scene_id).ok_or_else(|| usage(format!("unknown scene {}", s.scene_id)))?;
        let obj = world.object(&s.object_id).ok_or_else(|| usage(format!("unknown object {}", s.object_id)))?;
        let p = s.placement;
        by_oracle.push(plausible_geometry(p) && rule.label(&scene.spec, &obj.mask, p).label);
        if let Some(cs) = &cs {
            by_cs.push(plausible_geometry(p) && cs.prob_positive(&scene.layout, &obj.mask, p)? >= 0.5);
        }
        groups.entry((s.scene_id.clone(), s.object_id.clone())).or_default().push(p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = Vec::new();
    for (scene_id, object_id) in groups.keys() {
        let scene = world.scene(scene_id).expect("checked above");
        let obj = world.object(object_id).expect("checked above");
        for _ in 0..reference_per_task {
            reference.push(sample_positive_placement(rule, &scene.spec, &obj.mask, &mut rng)?);
        }
    }
    let group_list: Vec<Vec<Placement<f64>>> = groups.into_values().collect();
    let (ds, dh, dv) = diversity_deltas(&group_list).map_err(|e| usage(format!("diversity: {e}")))?;
    let finite: Vec<Placement<f64>> = samples.iter().map(|s| s.placement).filter(|p| p.is_finite()).collect();
    let fpd = frechet_placement_distance(&finite, &reference).map_err(|e| usage(format!("fpd: {e}")))?;
    let accuracy_oracle = accuracy(&by_oracle)?;
    let accuracy_cs = if cs.is_some() { Some(accuracy(&by_cs)?) } else { None };
    let chosen = match a.judge {
        Judge::Oracle => accuracy_oracle,
        Judge::Cs => accuracy_cs.expect("checked above"),
    };
    let judge = match a.judge {
        Judge::Oracle => "oracle",
        Judge::Cs => "cs",
    };
    let config = serde_json::json!({ "judge": judge, "reference_per_task": reference_per_task, "seed": seed });
    let report = EvaluateReport {
        metrics: MetricsReport { accuracy: chosen, fpd, ds, dh, dv, n: samples.len(), config: Some(config) },
        judge: judge.into(),
        accuracy_oracle,
        accuracy_cs,
    };
    prepare_output(&a.out)?;
    write_json(&a.out, &report)?;
    println!("accuracy {chosen:.4} ({judge}), FPD {fpd:.5}, Δs {ds:.4} Δh {dh:.4} Δv {dv:.4} over {} samples", samples.len());
    Ok(())
}

fn ablate(cfg: RunConfig, seed: u64, a: AblateLambda) -> Result<()> {
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => cfg.ablation.grid.clone(),
    };
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(usage("grid: values must be finite and >= 0"));
    }
    let per_task = a.per_task.unwrap_or(cfg.ablation.per_task);
    if per_task < 2 {
        return Err(usage("per_task must be at least 2"));
    }
    let world = load_world(&a.corpus)?;
    let lib = Library::from_corpus(&world);
    let net = load_diffusion(&a.diffusion)?;
    let cs = load_cs(&a.cs)?;
    let rule = &world.config.world.oracle;

    let mut pairs: Vec<(&SceneEntry, &diffpop::synthworld::ObjectEntry)> =
        world.scenes_in(Split::Test).flat_map(|s| world.objects.iter().map(move |o| (s, o))).collect();
    if let Some(cap) = a.tasks.or(cfg.ablation.tasks) {
        pairs.truncate(cap);
    }
    if pairs.is_empty() {
        return Err(usage("no test-split tasks to sweep"));
    }
    let bound = pairs.iter().map(|(s, o)| Ok(cs.bind(&s.layout, lib.object(&o.id)?.clone())?)).collect::<Result<Vec<_>>>()?;
    let judges: Vec<Box<dyn Fn(Placement<f64>) -> bool + '_>> = pairs
        .iter()
        .map(|&(s, o)| Box::new(move |p: Placement<f64>| plausible_geometry(p) && rule.label(&s.spec, &o.mask, p).label) as Box<_>)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = Vec::new();
    for (s, o) in &pairs {
        for _ in 0..cfg.ablation.reference_per_task {
            reference.push(sample_positive_placement(rule, &s.spec, &o.mask, &mut rng)?);
        }
    }
    let tasks: Vec<SweepTask<'_, f64>> = bound.iter().zip(&judges).map(|(g, j)| SweepTask { guide: g, judge: j.as_ref() }).collect();
    let rows = sweep_lambda(&net, net.schedule(), &tasks, &grid, per_task, seed, &reference)?;

    prepare_output(&a.out)?;
    write_sweep_csv(&a.out, &rows)?;
    let summary = serde_json::json!({ "seed": seed, "per_task": per_task, "tasks": pairs.len(), "grid": grid, "rows": rows });
    write_json(&a.out.with_extension("json"), &summary)?;
    let inputs = serde_json::json!({ "diffusion": a.diffusion, "cs": a.cs, "corpus": a.corpus, "tasks": pairs.len() });
    let mut ablation = cfg.ablation.clone();
    ablation.grid = grid;
    ablation.per_task = per_task;
    write_manifest(&sibling(&a.out, ".run.json"), "ablate-lambda", seed, &ablation, inputs)?;
    for r in &rows {
        println!("lambda {:<6} accuracy {:.4} fpd {:.5}", r.lambda, r.accuracy, r.fpd);
    }
    Ok(())
}

fn serve(cfg: RunConfig, a: Serve) -> Result<()> {
    require_file(&a.corpus.join(WORLD_FILE), "corpus manifest")?;
    let defaults = label_service::RetrainDefaults { train: cfg.classifier.clone(), ..Default::default() };
    let state = label_service::AppState::open(&a.corpus, defaults)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| environment(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| environment(format!("cannot listen on {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        label_service::serve(listener, state, a.static_dir, shutdown).await?;
        println!("shut down cleanly; audit log flushed");
        Ok(())
    })
}
