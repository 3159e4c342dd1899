use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use diffpop::datastore::{read_audit, read_world};

const BIN: &str = env!("CARGO_BIN_EXE_diffpop");
const SMALL: &str = r#"{"corpus": {"n_scenes": 10, "classifier_per_pair": 12, "diffusion_per_pair": 4, "pairs_per_scene": 8}}"#;

fn diffpop(args: &[&str]) -> Output {
    diffpop_env(args, &[])
}

fn diffpop_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("DIFFPOP_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small world with briefly trained models, built once per test binary.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = root.join("small.json");
        std::fs::write(&cfg, SMALL).unwrap();
        let world = root.join("world");
        ok(&diffpop(&["--config", s(&cfg), "gen-data", "--out", s(&world)]));
        ok(&diffpop(&["train-diffusion", "--corpus", s(&world), "--out", s(&root.join("diff.dpnet")), "--epochs", "20", "--lr", "1e-3"]));
        ok(&diffpop(&["train-cs", "--corpus", s(&world), "--out", s(&root.join("cs.dpnet")), "--variant", "descriptor", "--epochs", "10"]));
        ok(&diffpop(&["train-cr", "--corpus", s(&world), "--out", s(&root.join("cr.dpnet")), "--epochs", "5"]));
        Fixture { _dir: dir, root }
    })
}

fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = PathBuf::from(p.file_name().unwrap());
        if p.is_dir() {
            out.extend(read_dir_bytes(&p).into_iter().map(|(q, b)| (name.join(q), b)));
        } else {
            out.push((name, std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_valid_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&diffpop(&["--config", s(&cfg), "--seed", "7", "gen-data", "--out", s(&a)]));
    ok(&diffpop(&["--config", s(&cfg), "--seed", "7", "gen-data", "--out", s(&b)]));
    let world = read_world(&a).unwrap();
    assert_eq!(world.scenes.len(), 10);
    assert_eq!(world.config.seed, 7);
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b), "same seed must give byte-identical corpora");

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "gen-data");
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let seed_of = |args: &[&str], env: &[(&str, &str)], name: &str| {
        let out = dir.path().join(name);
        let mut full = vec!["--config", s(&cfg)];
        full.extend_from_slice(args);
        full.extend_from_slice(&["gen-data", "--out", s(&out)]);
        ok(&diffpop_env(&full, env));
        read_world(&out).unwrap().config.seed
    };
    assert_eq!(seed_of(&[], &[], "none"), 0);
    assert_eq!(seed_of(&[], &[("DIFFPOP_SEED", "11")], "env"), 11);
    assert_eq!(seed_of(&["--seed", "3"], &[("DIFFPOP_SEED", "11")], "flag"), 3);
    let bad = diffpop_env(&["gen-data", "--out", s(&dir.path().join("x"))], &[("DIFFPOP_SEED", "abc")]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"corpus": {"world": {"oracle": {"tau_fraction": -0.1}}}}"#).unwrap();
    let out = diffpop(&["--config", s(&bad), "gen-data", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("tau_fraction"), "{}", stderr(&out));

    std::fs::write(&bad, r#"{"corpuss": {}}"#).unwrap();
    let out = diffpop(&["--config", s(&bad), "gen-data", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("corpuss"));

    let out = diffpop(&["--config", s(&dir.path().join("missing.json")), "gen-data", "--out", "o"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&diffpop(&["gen-data"])), 2, "missing required flag");
}

#[test]
fn train_diffusion_defaults_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, r#"{"corpus": {"n_scenes": 3, "classifier_per_pair": 2, "diffusion_per_pair": 2, "pairs_per_scene": 1}}"#).unwrap();
    let world = dir.path().join("w");
    ok(&diffpop(&["--config", s(&cfg), "gen-data", "--out", s(&world)]));
    let ckpt = dir.path().join("d.dpnet");
    ok(&diffpop(&["train-diffusion", "--corpus", s(&world), "--out", s(&ckpt)]));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("d.dpnet.run.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["epochs"], 400);
    assert_eq!(m["config"]["batch_size"], 128);
    assert_eq!(m["config"]["lr"], 1e-4);
    assert_eq!(m["config"]["steps"], 100);
    let loss = std::fs::read_to_string(dir.path().join("d.dpnet.loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,loss"));
    assert_eq!(loss.lines().count(), 401);

    let out = diffpop(&["train-diffusion", "--corpus", s(&dir.path().join("nowhere")), "--out", s(&ckpt)]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&diffpop(&["train-diffusion", "--corpus", s(&world), "--out", s(&ckpt), "--lr", "0"])), 2);
}

#[test]
fn one_epoch_on_the_default_corpus_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w");
    ok(&diffpop(&["gen-data", "--out", s(&world)]));
    let start = Instant::now();
    ok(&diffpop(&["train-diffusion", "--corpus", s(&world), "--out", s(&dir.path().join("d.dpnet")), "--epochs", "1"]));
    assert!(start.elapsed() < Duration::from_secs(10), "{:?}", start.elapsed());
}

#[test]
fn classifier_training_is_deterministic() {
    let f = fixture();
    let world = f.path("world");
    let dir = tempfile::tempdir().unwrap();
    for (cmd, extra) in [("train-cs", vec!["--variant", "layout", "--epochs", "3"]), ("train-cr", vec!["--epochs", "3"])] {
        let (a, b) = (dir.path().join(format!("{cmd}-a.dpnet")), dir.path().join(format!("{cmd}-b.dpnet")));
        for out in [&a, &b] {
            let mut args = vec![cmd, "--corpus", s(&world), "--out", s(out)];
            args.extend_from_slice(&extra);
            ok(&diffpop(&args));
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{cmd}");
        assert!(sibling_exists(&a, ".run.json") && sibling_exists(&a, ".loss.csv"));
        assert_eq!(code(&diffpop(&[cmd, "--corpus", "missing-dir", "--out", s(&a)])), 2);
        assert_eq!(code(&diffpop(&[cmd, "--corpus", s(&world), "--out", s(&a), "--epochs", "0"])), 2);
    }
    assert_eq!(code(&diffpop(&["train-cs", "--corpus", s(&world), "--out", "x", "--variant", "pixels"])), 2);
}

fn sibling_exists(p: &Path, suffix: &str) -> bool {
    PathBuf::from(format!("{}{suffix}", p.display())).exists()
}

fn lines(p: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn sampling_modes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let base = ["--diffusion", s(&f.path("diff.dpnet")), "--corpus", s(&f.path("world")), "--n", "5"].map(String::from);
    let run = |extra: &[&str], out: &Path| {
        let mut args: Vec<&str> = vec!["sample"];
        args.extend(base.iter().map(String::as_str));
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(out)]);
        diffpop(&args)
    };
    let (plain, zero, guided) = (dir.path().join("plain.jsonl"), dir.path().join("zero.jsonl"), dir.path().join("guided.jsonl"));
    ok(&run(&[], &plain));
    ok(&run(&["--cs", s(&f.path("cs.dpnet")), "--lambda", "0"], &zero));
    assert_eq!(std::fs::read(&plain).unwrap(), std::fs::read(&zero).unwrap());
    ok(&run(&["--cs", s(&f.path("cs.dpnet")), "--lambda", "0.05"], &guided));
    assert_ne!(std::fs::read(&plain).unwrap(), std::fs::read(&guided).unwrap());

    let world = read_world(&f.path("world")).unwrap();
    let test_scenes = world.scenes.iter().filter(|s| s.split == diffpop::datastore::Split::Test).count();
    assert_eq!(lines(&plain).len(), test_scenes * world.objects.len() * 5);

    let multi = dir.path().join("multi.jsonl");
    ok(&run(
        &["--objects", "4", "--scene", &world.scenes[0].spec.id, "--cs", s(&f.path("cs.dpnet")), "--cr", s(&f.path("cr.dpnet")), "--lambda", "0.01", "--lambda-r", "0.1"],
        &multi,
    ));
    let recs = lines(&multi);
    assert_eq!(recs.len(), 4 * 5);
    for run_idx in 0..5 {
        let slots: Vec<_> = recs.iter().filter(|r| r["run"] == run_idx).map(|r| r["slot"].as_u64().unwrap()).collect();
        assert_eq!(slots, vec![0, 1, 2, 3]);
    }

    assert_eq!(code(&run(&["--lambda", "0.1"], &dir.path().join("x.jsonl"))), 2, "guidance without a classifier");
    assert_eq!(code(&run(&["--scene", "no-such-scene"], &dir.path().join("x.jsonl"))), 2);
    assert_eq!(code(&run(&["--lambda", "-1", "--cs", s(&f.path("cs.dpnet"))], &dir.path().join("x.jsonl"))), 2);

    // outputs are re-loadable by evaluate
    let report = dir.path().join("report.json");
    ok(&diffpop(&["evaluate", "--samples", s(&guided), "--corpus", s(&f.path("world")), "--judge", "cs", "--cs", s(&f.path("cs.dpnet")), "--out", s(&report)]));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for key in ["accuracy", "fpd", "ds", "dh", "dv", "n", "accuracy_oracle", "accuracy_cs"] {
        assert!(r.get(key).is_some_and(|v| !v.is_null()), "missing {key}");
    }
    assert_eq!(r["accuracy"], r["accuracy_cs"]);
    assert_eq!(r["judge"], "cs");
    ok(&diffpop(&["evaluate", "--samples", s(&multi), "--corpus", s(&f.path("world")), "--out", s(&report)]));
}

#[test]
fn evaluate_errors() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = diffpop(&["evaluate", "--samples", s(&empty), "--corpus", s(&f.path("world")), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 2);
    let missing = diffpop(&["evaluate", "--samples", "nope.jsonl", "--corpus", s(&f.path("world")), "--out", "r.json"]);
    assert_eq!(code(&missing), 2);
    let samples = dir.path().join("s.jsonl");
    std::fs::write(&samples, "{\"scene_id\":\"scene-0000\",\"object_id\":\"object-00\",\"run\":0,\"slot\":0,\"placement\":{\"s\":0.3,\"v\":0.1,\"h\":0.0}}\n").unwrap();
    let no_cs = diffpop(&["evaluate", "--samples", s(&samples), "--corpus", s(&f.path("world")), "--judge", "cs", "--out", "r.json"]);
    assert_eq!(code(&no_cs), 2);
}

#[test]
fn ablation_grid_and_reproducibility() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (diff, cs, world) = (f.path("diff.dpnet"), f.path("cs.dpnet"), f.path("world"));
    let sweep = |out: &Path, grid: Option<&str>| {
        let mut args = vec![
            "ablate-lambda", "--diffusion", s(&diff), "--cs", s(&cs), "--corpus", s(&world),
            "--tasks", "3", "--per-task", "4", "--out", s(out),
        ];
        if let Some(g) = grid {
            args.extend_from_slice(&["--grid", g]);
        }
        ok(&diffpop(&args));
        std::fs::read_to_string(out).unwrap()
    };
    let a = sweep(&dir.path().join("a.csv"), None);
    let lambdas: Vec<&str> = a.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let parsed: Vec<f64> = lambdas.iter().map(|l| l.parse().unwrap()).collect();
    assert_eq!(parsed, vec![0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5]);
    assert_eq!(a.lines().next(), Some("lambda,accuracy,fpd,ds,dh,dv"));
    assert_eq!(sweep(&dir.path().join("b.csv"), None), a);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 10);

    let custom = sweep(&dir.path().join("c.csv"), Some("0, 0.3,1"));
    assert_eq!(custom.lines().count(), 1 + 3);
    let bad = diffpop(&["ablate-lambda", "--diffusion", "x", "--cs", "y", "--corpus", "z", "--grid", "0,-1", "--out", "o.csv"]);
    assert_eq!(code(&bad), 2);
}

struct Served {
    child: std::process::Child,
    base: String,
}

fn serve(corpus: &Path, port: u16) -> Served {
    let mut child = Command::new(BIN)
        .args(["serve", "--corpus", s(corpus), "--port", &port.to_string()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
    Served { child, base }
}

#[test]
fn serve_health_labels_and_sigint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("w");
    ok(&Command::new("cp").args(["-r", s(&f.path("world")), s(&corpus)]).output().unwrap());
    let samples = dir.path().join("s.jsonl");
    ok(&diffpop(&["sample", "--diffusion", s(&f.path("diff.dpnet")), "--corpus", s(&corpus), "--n", "3", "--out", s(&samples)]));
    ok(&diffpop(&["import-samples", "--samples", s(&samples), "--corpus", s(&corpus)]));

    let mut srv = serve(&corpus, 0);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let client = reqwest::Client::new();
        let health: serde_json::Value = client.get(format!("{}/api/health", srv.base)).send().await.unwrap().json().await.unwrap();
        assert_eq!(health["version"], env!("CARGO_PKG_VERSION"));
        let batch: Vec<serde_json::Value> = client.get(format!("{}/api/batch?n=2", srv.base)).send().await.unwrap().json().await.unwrap();
        assert_eq!(batch.len(), 2);
        for item in &batch {
            let resp = client
                .post(format!("{}/api/label", srv.base))
                .json(&serde_json::json!({ "id": item["id"], "label": 1 }))
                .send()
                .await
                .unwrap();
            assert!(resp.status().is_success());
        }
    });

    // port busy
    let busy = diffpop(&["serve", "--corpus", s(&corpus), "--port", srv.base.rsplit(':').next().unwrap()]);
    assert_eq!(code(&busy), 3, "{}", stderr(&busy));

    ok(&Command::new("kill").args(["-INT", &srv.child.id().to_string()]).output().unwrap());
    let status = srv.child.wait().unwrap();
    assert!(status.success(), "{status:?}");
    let audit = read_audit(&corpus.join("audit.jsonl")).unwrap();
    assert_eq!(audit.len(), 2);
    assert!(audit.iter().all(|e| e.label == 1));

    assert_eq!(code(&diffpop(&["serve", "--corpus", s(&dir.path().join("none"))])), 2);
}
