use diffpop::classifier::{PairScore, StructScore};
use diffpop::diffusion::{chain_rng, p_sample_step, sample_unguided, NoisePredictor, NoiseSchedule, Placement, ScheduleSpec};
use diffpop::guidance::{
    guided_sample_step, object_pairs, read_sweep_csv, sample_guided, sample_multi, sweep_lambda, task_seed, write_sweep_csv,
    GuidanceConfig, SweepRow, SweepTask,
};
use diffpop::metrics::{accuracy, diversity_deltas, frechet_placement_distance};
use diffpop::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A crude predictor with some state dependence, so chains actually differ.
struct Shrink;

impl NoisePredictor<f64> for Shrink {
    fn predict_eps(&self, xs: &[[f64; 3]], ts: &[usize]) -> Result<Vec<[f64; 3]>> {
        Ok(xs.iter().zip(ts).map(|(x, &t)| x.map(|v| 0.3 * v * t as f64 / 100.0)).collect())
    }
}

/// `log p = −‖x − c‖²`, gradient `2(c − x)`.
struct Quadratic([f64; 3]);

impl StructScore<f64> for Quadratic {
    fn log_prob_and_grad(&self, x: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let d = [0, 1, 2].map(|k| self.0[k] - x[k]);
        Ok((-d.iter().map(|v| v * v).sum::<f64>(), d.map(|v| 2.0 * v)))
    }
}

/// Fails loudly if a scorer is consulted at all.
struct Panics;

impl StructScore<f64> for Panics {
    fn log_prob_and_grad(&self, _: [f64; 3]) -> Result<(f64, [f64; 3])> {
        panic!("structural score evaluated at lambda = 0")
    }
}

impl PairScore<f64> for Panics {
    fn log_prob_and_grad(&self, _: [f64; 3], _: [f64; 3]) -> Result<(f64, [f64; 3], [f64; 3])> {
        panic!("pair score evaluated at lambda_r = 0")
    }
}

struct Attract;

impl PairScore<f64> for Attract {
    fn log_prob_and_grad(&self, a: [f64; 3], b: [f64; 3]) -> Result<(f64, [f64; 3], [f64; 3])> {
        let d = [0, 1, 2].map(|k| b[k] - a[k]);
        Ok((-d.iter().map(|v| v * v).sum::<f64>(), d.map(|v| 2.0 * v), d.map(|v| -2.0 * v)))
    }
}

fn sched() -> NoiseSchedule<f64> {
    NoiseSchedule::from_spec(ScheduleSpec::rescaled_default(100)).unwrap()
}

#[test]
fn guided_step_shifts_mean_by_scaled_gradient() {
    let s = sched();
    let c = [0.4, -0.1, 0.3];
    for (t, x, lambda) in [(50, [0.1, 0.2, -0.5], 0.7), (1, [0.3, 0.0, 0.2], 2.0), (100, [-1.0, 1.0, 0.5], 0.05)] {
        let plain = p_sample_step(&Shrink, x, t, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let guided = guided_sample_step(&Shrink, &Quadratic(c), x, t, lambda, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 0..3 {
            let expected = lambda * s.sigma(t) * 2.0 * (c[k] - x[k]);
            assert!((guided[k] - plain[k] - expected).abs() <= 1e-12, "t={t} axis {k}");
        }
    }
}

#[test]
fn zero_lambda_never_consults_the_classifier() {
    let s = sched();
    let guided = sample_guided(&Shrink, &Panics, &s, 0.0, 8, 11).unwrap();
    assert_eq!(guided, sample_unguided(&Shrink, &s, 8, 11).unwrap());
    assert!(sample_guided(&Shrink, &Panics, &s, -1.0, 8, 11).is_err());
}

#[test]
fn pair_counts_grow_quadratically() {
    let s = NoiseSchedule::<f64>::linear(5, 1e-4, 0.02).unwrap();
    for k in 2..=8 {
        assert_eq!(object_pairs(k).len(), k * (k - 1) / 2);
        let quads: Vec<Quadratic> = (0..k).map(|j| Quadratic([0.3, 0.1 * j as f64, 0.0])).collect();
        let guides: Vec<&dyn StructScore<f64>> = quads.iter().map(|q| q as &dyn StructScore<f64>).collect();
        let cfg = GuidanceConfig { lambda: 0.1, lambda_r: 0.2, seed: 4 };
        let (out, trace) = sample_multi(&Shrink, &guides, &Attract, &s, &cfg).unwrap();
        assert_eq!(out.len(), k);
        assert_eq!(trace.pairs_per_step, vec![k * (k - 1) / 2; 5]);
    }
    assert!(object_pairs(1).is_empty());
}

#[test]
fn zero_lambda_r_decouples_objects() {
    let s = sched();
    let quads = [Quadratic([0.3, 0.2, -0.4]), Quadratic([0.5, -0.3, 0.1]), Quadratic([0.2, 0.0, 0.6])];
    let guides: Vec<&dyn StructScore<f64>> = quads.iter().map(|q| q as &dyn StructScore<f64>).collect();
    let cfg = GuidanceConfig { lambda: 0.05, lambda_r: 0.0, seed: 17 };
    let (joint, trace) = sample_multi(&Shrink, &guides, &Panics, &s, &cfg).unwrap();
    assert!(trace.pairs_per_step.iter().all(|&n| n == 0));
    for (j, q) in quads.iter().enumerate() {
        // object j owns chain_rng(seed, j), which is chain j of a guided run
        let alone = sample_guided(&Shrink, q, &s, cfg.lambda, j + 1, cfg.seed).unwrap();
        assert_eq!(joint[j], alone[j]);
    }
}

#[test]
fn relational_term_pulls_objects_together() {
    let s = sched();
    let far = [Quadratic([0.3, -0.6, -0.6]), Quadratic([0.3, 0.6, 0.6])];
    let guides: Vec<&dyn StructScore<f64>> = far.iter().map(|q| q as &dyn StructScore<f64>).collect();
    let gap = |lambda_r: f64| {
        let mut total = 0.0;
        for seed in 0..20 {
            let (o, _) = sample_multi(&Shrink, &guides, &Attract, &s, &GuidanceConfig { lambda: 0.02, lambda_r, seed }).unwrap();
            total += ((o[0].v - o[1].v).powi(2) + (o[0].h - o[1].h).powi(2)).sqrt();
        }
        total / 20.0
    };
    assert!(gap(0.05) < gap(0.0));
}

#[test]
fn config_validation() {
    assert!(GuidanceConfig::default().validate().is_ok());
    for bad in [
        GuidanceConfig { lambda: -0.1, ..Default::default() },
        GuidanceConfig { lambda: f64::NAN, ..Default::default() },
        GuidanceConfig { lambda_r: f64::INFINITY, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let s = sched();
    let one = [&Quadratic([0.0; 3]) as &dyn StructScore<f64>];
    assert!(sample_multi(&Shrink, &one, &Attract, &s, &GuidanceConfig::default()).is_err());
}

#[test]
fn sweep_at_zero_reproduces_unguided_sampling() {
    let s = sched();
    let quads = [Quadratic([0.3, 0.2, 0.0]), Quadratic([0.4, -0.2, 0.1])];
    let judge = |p: Placement<f64>| p.s > 0.0;
    let tasks: Vec<SweepTask<'_, f64>> = quads.iter().map(|q| SweepTask { guide: q, judge: &judge }).collect();
    let reference: Vec<Placement<f64>> =
        (0..30).map(|i| Placement::new(0.3 + 0.01 * i as f64, (i % 7) as f64 * 0.05, (i % 5) as f64 * -0.03)).collect();
    let rows = sweep_lambda(&Shrink, &s, &tasks, &[0.0, 0.5], 12, 5, &reference).unwrap();
    assert_eq!(rows.len(), 2);

    let groups: Vec<Vec<Placement<f64>>> = (0..2).map(|i| sample_unguided(&Shrink, &s, 12, task_seed(5, i)).unwrap()).collect();
    let all: Vec<Placement<f64>> = groups.concat();
    let judged: Vec<bool> = all.iter().map(|&p| judge(p)).collect();
    let (ds, dh, dv) = diversity_deltas(&groups).unwrap();
    let expected = SweepRow {
        lambda: 0.0,
        accuracy: accuracy(&judged).unwrap(),
        fpd: frechet_placement_distance(&all, &reference).unwrap(),
        ds,
        dh,
        dv,
    };
    assert_eq!(rows[0], expected);
    assert_ne!(rows[1].fpd, rows[0].fpd);

    assert!(sweep_lambda(&Shrink, &s, &tasks, &[], 12, 5, &reference).is_err());
    assert!(sweep_lambda(&Shrink, &s, &[], &[0.0], 12, 5, &reference).is_err());
}

#[test]
fn task_seeds_are_disjoint() {
    assert_eq!(task_seed(7, 0), 7);
    assert_eq!(task_seed(7, 3), 7 + (3 << 32));
    let _ = chain_rng(task_seed(7, 1), 0);
}

#[test]
fn sweep_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let rows = vec![
        SweepRow { lambda: 0.0, accuracy: 0.5, fpd: 0.123456789, ds: 0.1, dh: 0.2, dv: 0.3 },
        SweepRow { lambda: 0.01, accuracy: 0.75, fpd: 1e-7, ds: 0.0, dh: 1.5, dv: 2.0 / 3.0 },
    ];
    write_sweep_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lambda,accuracy,fpd,ds,dh,dv");
    assert_eq!(read_sweep_csv(&path).unwrap(), rows);

    std::fs::write(&path, "lambda,accuracy,fpd,ds,dh,dv\n0.1,x,0,0,0,0\n").unwrap();
    assert!(read_sweep_csv(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn guided_chains_are_reproducible(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let s = NoiseSchedule::<f64>::linear(20, 1e-4, 0.02).unwrap();
        let q = Quadratic([0.3, 0.1, -0.2]);
        let a = sample_guided(&Shrink, &q, &s, lambda, 3, seed).unwrap();
        let b = sample_guided(&Shrink, &q, &s, lambda, 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
