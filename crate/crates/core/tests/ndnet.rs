use diffpop::ndnet::checkpoint::{read_checkpoint, write_checkpoint, MAGIC};
use diffpop::ndnet::{AdamState, Graph, Head, Mlp, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTHS: [usize; 5] = [5, 9, 7, 6, 2];

fn random_net(rng: &mut ChaCha8Rng) -> Mlp<f64> {
    let mut mlp = Mlp::new(&WIDTHS, Head::Logits2, rng).unwrap();
    for b in mlp.params_mut().into_iter().skip(1).step_by(2) {
        b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    mlp
}

/// Plain-loop forward pass. Also returns the smallest |pre-activation| of
/// any hidden unit so callers can stay away from ReLU kinks.
fn loop_forward(mlp: &Mlp<f64>, x: &[f64], rows: usize) -> (Vec<f64>, f64) {
    let params = mlp.params();
    let mut h = x.to_vec();
    let mut nearest_kink = f64::INFINITY;
    let layers = params.len() / 2;
    for l in 0..layers {
        let (w, b) = (params[2 * l], params[2 * l + 1]);
        let (k, n) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..k {
                    acc += h[r * k + i] * w.data()[i * n + j];
                }
                acc += b.data()[j];
                if l + 1 < layers {
                    nearest_kink = nearest_kink.min(acc.abs());
                    acc = acc.max(0.0);
                }
                out[r * n + j] = acc;
            }
        }
        h = out;
    }
    (h, nearest_kink)
}

fn ce_loss(mlp: &Mlp<f64>, x: &[f64], labels: &[u8]) -> f64 {
    let mut g = Graph::new();
    let input = g.leaf(Tensor::new(vec![labels.len(), WIDTHS[0]], x.to_vec()).unwrap(), false);
    let out = mlp.forward(&mut g, input, false).unwrap().output;
    let loss = g.cross_entropy_2class(out, labels, None).unwrap();
    g.value(loss).item()
}

/// Norm-wise relative error of one gradient tensor. Elementwise ratios are
/// meaningless for entries near zero, where the difference quotient is
/// rounding noise.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

#[test]
fn forward_matches_plain_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let mlp = random_net(&mut rng);
        let x: Vec<f64> = (0..4 * WIDTHS[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let input = Tensor::new(vec![4, WIDTHS[0]], x.clone()).unwrap();
        let (oracle, _) = loop_forward(&mlp, &x, 4);
        let fast = mlp.predict(&input).unwrap();
        let mut g = Graph::new();
        let node = g.leaf(input, false);
        let out = mlp.forward(&mut g, node, false).unwrap().output;
        for ((a, b), c) in fast.data().iter().zip(g.value(out).data()).zip(&oracle) {
            assert!((a - c).abs() <= 1e-12);
            assert_eq!(a.to_bits(), b.to_bits(), "predict and recorded forward must agree bitwise");
        }
    }
}

#[test]
fn every_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut points = 0;
    let mut worst = 0.0f64;
    while points < 100 {
        let mut mlp = random_net(&mut rng);
        let x: Vec<f64> = (0..3 * WIDTHS[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
        let labels = [1u8, 0, 1];
        if loop_forward(&mlp, &x, 3).1 < 1e-3 {
            continue;
        }
        points += 1;
        let mut g = Graph::new();
        let input = g.leaf(Tensor::new(vec![3, WIDTHS[0]], x.clone()).unwrap(), true);
        let nodes = mlp.forward(&mut g, input, true).unwrap();
        let loss = g.cross_entropy_2class(nodes.output, &labels, None).unwrap();
        let grads = g.backward(loss).unwrap();

        let gx = grads.get(input).unwrap().data().to_vec();
        let mut nx = Vec::new();
        for i in 0..x.len() {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            nx.push((ce_loss(&mlp, &up, &labels) - ce_loss(&mlp, &down, &labels)) / (2.0 * h));
        }
        worst = worst.max(rel_err(&gx, &nx));
        let analytic: Vec<Vec<f64>> = nodes.params.iter().map(|&p| grads.get(p).unwrap().data().to_vec()).collect();
        for (k, ga) in analytic.iter().enumerate() {
            let mut num = Vec::new();
            for j in 0..ga.len() {
                let orig = mlp.params()[k].data()[j];
                mlp.params_mut()[k].data_mut()[j] = orig + h;
                let up = ce_loss(&mlp, &x, &labels);
                mlp.params_mut()[k].data_mut()[j] = orig - h;
                let down = ce_loss(&mlp, &x, &labels);
                mlp.params_mut()[k].data_mut()[j] = orig;
                num.push((up - down) / (2.0 * h));
            }
            worst = worst.max(rel_err(ga, &num));
        }
    }
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn cross_entropy_by_hand() {
    let mut g = Graph::<f64>::new();
    let logits = g.leaf(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 3.0]).unwrap(), false);
    let loss = g.cross_entropy_2class(logits, &[1, 0], None).unwrap();
    // row 2: -log(e^1 / (e^1 + e^3)) = log(1 + e^2)
    let expected = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
    assert!((g.value(loss).item() - expected).abs() < 1e-12);

    let mut g = Graph::<f64>::new();
    let logits = g.leaf(Tensor::new(vec![1, 2], vec![-100.0, 100.0]).unwrap(), false);
    let loss = g.cross_entropy_2class(logits, &[1], None).unwrap();
    assert!(g.value(loss).item() < 1e-12);
}

fn train_trajectory(seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::<f64>::new(&WIDTHS, Head::Logits2, &mut rng).unwrap();
    let mut adam = AdamState::new(1e-2, &mlp.params());
    let x: Vec<f64> = (0..8 * WIDTHS[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
    let mut losses = Vec::new();
    for _ in 0..25 {
        let mut g = Graph::new();
        let input = g.leaf(Tensor::new(vec![8, WIDTHS[0]], x.clone()).unwrap(), false);
        let nodes = mlp.forward(&mut g, input, true).unwrap();
        let loss = g.cross_entropy_2class(nodes.output, &labels, None).unwrap();
        losses.push(g.value(loss).item().to_bits());
        let mut grads = g.backward(loss).unwrap();
        let gs: Vec<Tensor<f64>> = nodes.params.iter().map(|&p| grads.take(p).unwrap()).collect();
        adam.step(&mut mlp.params_mut(), &gs).unwrap();
    }
    let weights = mlp.params().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect();
    (losses, weights)
}

#[test]
fn training_is_bit_reproducible() {
    assert_eq!(train_trajectory(9), train_trajectory(9));
    assert_ne!(train_trajectory(9).1, train_trajectory(10).1);
}

#[test]
fn checkpoint_header_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mlp = random_net(&mut rng);
    let meta = serde_json::json!({"kind": "test", "note": 0.1});
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &mlp, &meta).unwrap();
    assert_eq!(&buf[..6], MAGIC);
    let (back, meta_back) = read_checkpoint::<f64, _>(buf.as_slice()).unwrap();
    assert_eq!(meta_back, meta);
    assert_eq!(back.widths(), mlp.widths());
    assert_eq!(back.params(), mlp.params());
}

proptest! {
    #[test]
    fn two_class_probabilities_sum_to_one(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = random_net(&mut rng);
        let x: Vec<f64> = (0..6 * WIDTHS[0]).map(|_| rng.random_range(-scale..scale)).collect();
        let p = mlp.predict_proba(&Tensor::new(vec![6, WIDTHS[0]], x).unwrap()).unwrap();
        for row in p.data().chunks(2) {
            prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_lossless(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = random_net(&mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &mlp, &serde_json::json!({})).unwrap();
        let (back, _) = read_checkpoint::<f64, _>(buf.as_slice()).unwrap();
        prop_assert_eq!(back.params(), mlp.params());
    }
}
