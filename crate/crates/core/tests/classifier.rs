use std::sync::Arc;

use diffpop::classifier::{
    cr_log_prob_positive, cs_log_prob_positive, evaluate_classifier, evaluate_pairs, train_cr, train_cs, BinaryMetrics,
    ClassifierTrainConfig, InputKind, Library, RelClassifier, StructClassifier, StructMeta, StructScore,
};
use diffpop::compose::{ObjectMask, SceneLayout};
use diffpop::datastore::{CompositeRecord, PairRecord, Source, Split};
use diffpop::diffusion::Placement;
use diffpop::ndnet::{Activation, Head, Mlp, Tensor};
use diffpop::synthworld::{gen_object_library, gen_scene, WorldConfig};
use diffpop::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn library(scenes: usize) -> Library {
    let cfg = WorldConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lib = Library::default();
    for k in 0..scenes {
        let id = format!("scene-{k}");
        let (_, layout) = gen_scene(&id, &cfg, &mut rng).unwrap();
        lib.insert_scene(&id, layout);
    }
    for o in gen_object_library(2, cfg.object_resolution, &mut rng).unwrap() {
        lib.insert_object(&o.id, o.mask);
    }
    lib
}

fn record(i: usize, scenes: usize, p: Placement<f64>, label: u8) -> CompositeRecord {
    CompositeRecord {
        id: format!("r-{i}"),
        scene_id: format!("scene-{}", i % scenes),
        object_id: format!("object-{:02}", i % 2),
        placement: p,
        label: Some(label),
        split: Split::Train,
        source: Source::Oracle,
    }
}

/// Labels 1 iff s > 0.3, with a margin around the threshold.
fn separable(n: usize, scenes: usize, seed: u64) -> Vec<CompositeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let s = if label == 1 { rng.random_range(0.35..0.6) } else { rng.random_range(0.1..0.25) };
            record(i, scenes, Placement::new(s, rng.random_range(-0.3..0.6), rng.random_range(-0.6..0.6)), label)
        })
        .collect()
}

fn quick() -> ClassifierTrainConfig {
    ClassifierTrainConfig { epochs: 100, hidden: 16, ..Default::default() }
}

#[test]
fn separable_labels_are_learned() {
    let lib = library(4);
    let data = separable(400, 4, 2);
    for kind in [InputKind::MaskDescriptor, InputKind::MaskLayout] {
        let cfg = if kind == InputKind::MaskLayout { ClassifierTrainConfig { epochs: 100, hidden: 16, ..quick() } } else { quick() };
        let cs = train_cs::<f64>(&lib, &data, &[], kind, 8, &cfg).unwrap();
        let report = cs.report().unwrap();
        assert!(report.train.accuracy >= 0.98, "{kind:?}: {}", report.train.accuracy);
        // epoch-averaged windows of 10 never increase
        let windows: Vec<f64> = report.epoch_loss.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{kind:?}: {windows:?}");
    }
}

#[test]
fn shuffled_labels_give_chance_on_held_out_data() {
    let lib = library(4);
    let mut data = separable(1200, 4, 3);
    let mut labels: Vec<u8> = data.iter().map(|r| r.label.unwrap()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    for (r, l) in data.iter_mut().zip(labels) {
        r.label = Some(l);
    }
    let (train, test) = data.split_at(600);
    let cs = train_cs::<f64>(&lib, train, test, InputKind::MaskDescriptor, 8, &quick()).unwrap();
    let ba = cs.report().unwrap().validation.as_ref().unwrap().balanced_accuracy.unwrap();
    assert!((ba - 0.5).abs() <= 0.08, "balanced accuracy {ba}");
}

#[test]
fn training_is_deterministic() {
    let lib = library(3);
    let data = separable(200, 3, 5);
    let cfg = ClassifierTrainConfig { epochs: 5, ..quick() };
    let a = train_cs::<f64>(&lib, &data, &[], InputKind::MaskLayout, 8, &cfg).unwrap();
    let b = train_cs::<f64>(&lib, &data, &[], InputKind::MaskLayout, 8, &cfg).unwrap();
    assert_eq!(a.mlp().params(), b.mlp().params());
    assert_eq!(a.meta(), b.meta());
}

#[test]
fn single_class_is_rejected() {
    let lib = library(2);
    let data: Vec<CompositeRecord> = (0..10).map(|i| record(i, 2, Placement::new(0.3, 0.1, 0.0), 1)).collect();
    let err = train_cs::<f64>(&lib, &data, &[], InputKind::MaskDescriptor, 8, &quick()).unwrap_err();
    assert!(matches!(err, Error::SingleClass { positives: 10, negatives: 0 }));
}

fn descriptor_meta(lib: &Library) -> StructMeta {
    let scene = lib.scene("scene-0").unwrap();
    let d = 3 + scene.descriptor.len();
    StructMeta {
        kind: InputKind::MaskDescriptor,
        grid: 8,
        channels: scene.num_channels(),
        width: scene.width,
        height: scene.height,
        descriptor_dim: scene.descriptor.len(),
        class_weights: [1.0, 1.0],
        feature_scale: vec![1.0; d],
        feature_offset: vec![0.0; d],
        report: None,
    }
}

/// One linear layer whose logit gap is `w · features`.
fn linear_stub(lib: &Library, w: &[f64]) -> StructClassifier<f64> {
    let meta = descriptor_meta(lib);
    let d = meta.input_dim();
    let mut weights = vec![0.0; d * 2];
    for (i, wi) in w.iter().enumerate() {
        weights[i * 2 + 1] = *wi;
    }
    let mlp = Mlp::from_parts(
        vec![d, 2],
        vec![Tensor::new(vec![d, 2], weights).unwrap(), Tensor::zeros(vec![2])],
        Activation::Relu,
        Head::Logits2,
    )
    .unwrap();
    StructClassifier::from_parts(meta, mlp).unwrap()
}

#[test]
fn stub_classifiers() {
    let lib = library(1);
    let (scene, obj) = (lib.scene("scene-0").unwrap(), lib.object("object-00").unwrap());
    let uniform = linear_stub(&lib, &[]);
    let (lp, g) = cs_log_prob_positive(&uniform, scene, obj, [0.3, 0.1, 0.2]).unwrap();
    assert!((lp - 0.5f64.ln()).abs() < 1e-15);
    assert_eq!(g, [0.0; 3]);

    let s_only = linear_stub(&lib, &[2.0]);
    let (_, g) = cs_log_prob_positive(&s_only, scene, obj, [0.3, 0.1, 0.2]).unwrap();
    assert!(g[0] > 0.0);
    assert!(g[1].abs() <= 1e-9 && g[2].abs() <= 1e-9);
}

fn rel_stub(only_a: bool) -> RelClassifier<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mlp = Mlp::<f64>::new(&[6, 8, 2], Head::Logits2, &mut rng).unwrap();
    if only_a {
        let w = mlp.params_mut().remove(0);
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if i / 8 >= 3 {
                *v = 0.0;
            }
        }
    }
    RelClassifier::from_mlp(mlp).unwrap()
}

#[test]
fn relational_stubs() {
    let cr = rel_stub(true);
    let (_, ga, gb) = cr_log_prob_positive(&cr, [0.3, 0.2, -0.4], [0.2, 0.1, 0.5]).unwrap();
    assert!(ga.iter().any(|v| v.abs() > 1e-6));
    assert_eq!(gb, [0.0; 3]);

    let zero = Mlp::from_parts(
        vec![6, 2],
        vec![Tensor::zeros(vec![6, 2]), Tensor::zeros(vec![2])],
        Activation::Relu,
        Head::Logits2,
    )
    .unwrap();
    let uniform = RelClassifier::from_mlp(zero).unwrap();
    let (lp, _, _) = cr_log_prob_positive(&uniform, [0.1; 3], [0.2; 3]).unwrap();
    assert!((lp - 0.5f64.ln()).abs() < 1e-15);
    assert!(RelClassifier::from_mlp(Mlp::<f64>::new(&[5, 2], Head::Logits2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()).is_err());
}

fn pair(i: usize, a: [f64; 3], b: [f64; 3], label: u8) -> PairRecord {
    PairRecord {
        id: format!("p-{i}"),
        scene_id: "scene-0".into(),
        object_a: "object-00".into(),
        object_b: "object-01".into(),
        a: Placement::from_array(a),
        b: Placement::from_array(b),
        label,
        split: Split::Train,
    }
}

#[test]
fn relational_separable_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = Vec::new();
    while pairs.len() < 600 {
        let a: [f64; 3] = [rng.random_range(0.1..0.5), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
        let b: [f64; 3] = [rng.random_range(0.1..0.5), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
        let dist = ((a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        if (dist - 0.6).abs() < 0.05 {
            continue;
        }
        pairs.push(pair(pairs.len(), a, b, (dist > 0.6) as u8));
    }
    let cfg = ClassifierTrainConfig { epochs: 150, hidden: 32, ..Default::default() };
    let cr = train_cr::<f64>(&pairs, &[], &cfg).unwrap();
    assert!(cr.report().unwrap().train.accuracy >= 0.95, "{}", cr.report().unwrap().train.accuracy);
    let again = train_cr::<f64>(&pairs, &[], &cfg).unwrap();
    assert_eq!(cr.mlp().params(), again.mlp().params());
    assert_eq!(evaluate_pairs(&cr, &pairs).unwrap(), cr.report().unwrap().train);
    // only the shape is contractual; swapping the pair may change the score
    let swapped = cr.prob_positive(pairs[0].b.to_array(), pairs[0].a.to_array()).unwrap();
    assert!((0.0..=1.0).contains(&swapped));
}

#[test]
fn confusion_metrics() {
    let perfect = BinaryMetrics::from_predictions(&[true, false, true, false], &[1, 0, 1, 0]).unwrap();
    assert_eq!((perfect.f1, perfect.tpr, perfect.tnr, perfect.balanced_accuracy), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
    let hand = BinaryMetrics::from_counts(3, 1, 4, 2).unwrap();
    assert!((hand.f1.unwrap() - 6.0 / 9.0).abs() < 1e-12);
    let missing = BinaryMetrics::from_predictions(&[true, true], &[1, 1]).unwrap();
    assert!(!missing.is_defined());
}

#[test]
fn checkpoints_round_trip() {
    let lib = library(3);
    let data = separable(120, 3, 6);
    let dir = tempfile::tempdir().unwrap();
    let cs = train_cs::<f64>(&lib, &data, &data, InputKind::MaskLayout, 8, &ClassifierTrainConfig { epochs: 3, ..quick() }).unwrap();
    let path = dir.path().join("cs.dpnet");
    cs.save(&path).unwrap();
    assert!(path.with_extension("json").exists());
    let back = StructClassifier::<f64>::load(&path).unwrap();
    assert_eq!(back.meta(), cs.meta());
    assert_eq!(evaluate_classifier(&back, &lib, &data).unwrap(), evaluate_classifier(&cs, &lib, &data).unwrap());

    let cr = rel_stub(false);
    cr.save(&dir.path().join("cr.dpnet")).unwrap();
    assert!(StructClassifier::<f64>::load(&dir.path().join("cr.dpnet")).is_err());
    assert_eq!(RelClassifier::<f64>::load(&dir.path().join("cr.dpnet")).unwrap().mlp().params(), cr.mlp().params());
}

#[test]
fn scene_geometry_mismatch_is_an_error() {
    let lib = library(2);
    let cs = linear_stub(&lib, &[1.0]);
    let small = SceneLayout::new(8, 8, vec!["sky".into()], vec![vec![0; 64]], vec![0.0]).unwrap();
    let obj = Arc::new(ObjectMask::new(8, vec![0; 64]).unwrap());
    assert!(cs.bind(&small, obj).is_err());
}

fn trained_pair() -> (Library, StructClassifier<f64>, StructClassifier<f64>) {
    let lib = library(3);
    let data = separable(300, 3, 7);
    let cfg = ClassifierTrainConfig { epochs: 10, ..quick() };
    let layout = train_cs::<f64>(&lib, &data, &[], InputKind::MaskLayout, 8, &cfg).unwrap();
    let desc = train_cs::<f64>(&lib, &data, &[], InputKind::MaskDescriptor, 8, &cfg).unwrap();
    (lib, layout, desc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn class_log_probs_normalise(s in 0.05f64..0.9, v in -0.8f64..0.8, h in -0.8f64..0.8, pick in 0usize..6) {
        thread_local!(static MODELS: (Library, StructClassifier<f64>, StructClassifier<f64>) = trained_pair());
        MODELS.with(|(lib, layout, desc)| {
            let scene = lib.scene(&format!("scene-{}", pick % 3)).unwrap();
            let obj = lib.object(&format!("object-{:02}", pick % 2)).unwrap();
            for cs in [layout, desc] {
                let bound = cs.bind(scene, obj.clone()).unwrap();
                let (lp, g) = bound.log_prob_and_grad([s, v, h]).unwrap();
                prop_assert!(lp <= 0.0);
                prop_assert!(g.iter().all(|x| x.is_finite()));
                let p = cs.prob_positive(scene, obj, Placement::new(s, v, h)).unwrap();
                prop_assert!((lp.exp() - p).abs() <= 1e-9);
                prop_assert!((p + (1.0 - p) - 1.0).abs() <= 1e-9);
            }
            Ok(())
        })?;
    }
}
