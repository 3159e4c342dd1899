use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::placement::Placement;
use super::schedule::{NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::ndnet::{checkpoint, AdamState, Graph, Head, Mlp, Tensor};
use crate::scalar::Scalar;

/// Anything that predicts the injected noise `ε` from `(x_t, t)`.
pub trait NoisePredictor<T: Scalar>: Sync {
    /// One prediction per row; `ts[i]` is the timestep of `xs[i]`.
    fn predict_eps(&self, xs: &[[T; 3]], ts: &[usize]) -> Result<Vec<[T; 3]>>;
}

/// Sinusoidal embedding of an integer timestep: `dim / 2` sines followed by
/// the matching cosines, frequencies geometric from 1 down to 1/10000.
pub fn timestep_embedding<T: Scalar>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let freq = |i: usize| (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
    out.extend((0..half).map(|i| T::lit((t as f64 * freq(i)).sin())));
    out.extend((0..half).map(|i| T::lit((t as f64 * freq(i)).cos())));
    out.resize(dim, T::zero());
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    /// Overrides the rescaled DDPM endpoints when set.
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 128,
            lr: 1e-4,
            steps: 100,
            beta_start: None,
            beta_end: None,
            hidden: 128,
            embed_dim: 16,
            seed: 0,
        }
    }
}

impl DiffusionTrainConfig {
    pub fn schedule_spec(&self) -> ScheduleSpec {
        let d = ScheduleSpec::rescaled_default(self.steps);
        ScheduleSpec {
            steps: self.steps,
            beta_start: self.beta_start.unwrap_or(d.beta_start),
            beta_end: self.beta_end.unwrap_or(d.beta_end),
        }
    }
}

/// ε-prediction network: a 4-layer MLP over `x_t ⊕ embed(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionNet<T> {
    mlp: Mlp<T>,
    schedule: NoiseSchedule<T>,
    embed_dim: usize,
}

impl<T: Scalar> DiffusionNet<T> {
    pub fn new<R: Rng + ?Sized>(schedule: NoiseSchedule<T>, hidden: usize, embed_dim: usize, rng: &mut R) -> Result<Self> {
        let mlp = Mlp::new(&[3 + embed_dim, hidden, hidden, hidden, 3], Head::Linear, rng)?;
        Ok(Self { mlp, schedule, embed_dim })
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn schedule(&self) -> &NoiseSchedule<T> {
        &self.schedule
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn inputs(&self, xs: &[[T; 3]], ts: &[usize]) -> Result<Tensor<T>> {
        if xs.len() != ts.len() {
            return Err(Error::shape("predict_eps", "one timestep per row required"));
        }
        let mut data = Vec::with_capacity(xs.len() * (3 + self.embed_dim));
        for (x, &t) in xs.iter().zip(ts) {
            self.schedule.check_t(t)?;
            data.extend_from_slice(x);
            data.extend(timestep_embedding::<T>(t, self.embed_dim));
        }
        Tensor::new(vec![xs.len(), 3 + self.embed_dim], data)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let spec = self.schedule.spec();
        let meta = serde_json::json!({
            "kind": "diffusion",
            "steps": spec.steps,
            "beta_start": spec.beta_start,
            "beta_end": spec.beta_end,
            "embed_dim": self.embed_dim,
        });
        checkpoint::write_checkpoint(w, &self.mlp, &meta)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (mlp, meta) = checkpoint::read_checkpoint(r)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("diffusion") {
            return Err(Error::Checkpoint("not a diffusion checkpoint".into()));
        }
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::Checkpoint(format!("missing {k}")));
        let spec = ScheduleSpec {
            steps: field("steps")?.as_u64().unwrap_or(0) as usize,
            beta_start: field("beta_start")?.as_f64().unwrap_or(0.0),
            beta_end: field("beta_end")?.as_f64().unwrap_or(0.0),
        };
        let embed_dim = field("embed_dim")?.as_u64().unwrap_or(0) as usize;
        if mlp.in_dim() != 3 + embed_dim || mlp.out_dim() != 3 {
            return Err(Error::Checkpoint("network widths inconsistent with embedding".into()));
        }
        Ok(Self { mlp, schedule: NoiseSchedule::from_spec(spec)?, embed_dim })
    }
}

impl<T: Scalar> NoisePredictor<T> for DiffusionNet<T> {
    fn predict_eps(&self, xs: &[[T; 3]], ts: &[usize]) -> Result<Vec<[T; 3]>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.mlp.predict(&self.inputs(xs, ts)?)?;
        Ok(out.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

pub(crate) fn normal3<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> [T; 3] {
    let mut draw = || T::lit(rng.sample::<f64, _>(StandardNormal));
    [draw(), draw(), draw()]
}

/// `x_t = √ᾱ_t · x_0 + √(1 − ᾱ_t) · ε`.
pub fn q_sample<T: Scalar>(x0: [T; 3], t: usize, eps: [T; 3], sched: &NoiseSchedule<T>) -> Result<[T; 3]> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok([a * x0[0] + b * eps[0], a * x0[1] + b * eps[1], a * x0[2] + b * eps[2]])
}

/// Noise draws for one training batch: per item a timestep uniform in
/// `1..=T`, then three standard normals.
pub fn draw_training_noise<T: Scalar, R: Rng + ?Sized>(n: usize, steps: usize, rng: &mut R) -> (Vec<usize>, Vec<[T; 3]>) {
    let mut ts = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        ts.push(rng.random_range(1..=steps));
        eps.push(normal3(rng));
    }
    (ts, eps)
}

/// Mean over the batch of `‖ε − ε_θ(x_t, t)‖²`.
pub fn epsilon_loss<T: Scalar, R: Rng + ?Sized>(
    model: &impl NoisePredictor<T>,
    x0: &[[T; 3]],
    rng: &mut R,
    sched: &NoiseSchedule<T>,
) -> Result<T> {
    if x0.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (ts, eps) = draw_training_noise::<T, R>(x0.len(), sched.steps(), rng);
    let xt = x0
        .iter()
        .zip(&ts)
        .zip(&eps)
        .map(|((&x, &t), &e)| q_sample(x, t, e, sched))
        .collect::<Result<Vec<_>>>()?;
    let pred = model.predict_eps(&xt, &ts)?;
    let total: T = eps
        .iter()
        .zip(&pred)
        .map(|(e, p)| (0..3).map(|k| (e[k] - p[k]) * (e[k] - p[k])).sum::<T>())
        .sum();
    Ok(total / T::lit(x0.len() as f64))
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_loss: Vec<f64>,
}

/// Trains the unguided placement model on clean placements.
pub fn train_unguided<T: Scalar>(
    data: &[Placement<T>],
    cfg: &DiffusionTrainConfig,
) -> Result<(DiffusionNet<T>, LossTrace)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sched = NoiseSchedule::from_spec(cfg.schedule_spec())?;
    let mut net = DiffusionNet::new(sched.clone(), cfg.hidden, cfg.embed_dim, &mut rng)?;
    let mut adam = AdamState::new(cfg.lr, &net.mlp.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = LossTrace::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x0: Vec<[T; 3]> = chunk.iter().map(|&i| data[i].to_array()).collect();
            let (ts, eps) = draw_training_noise::<T, _>(x0.len(), sched.steps(), &mut rng);
            let xt = x0
                .iter()
                .zip(&ts)
                .zip(&eps)
                .map(|((&x, &t), &e)| q_sample(x, t, e, &sched))
                .collect::<Result<Vec<_>>>()?;

            let mut g = Graph::new();
            let input = g.leaf(net.inputs(&xt, &ts)?, false);
            let nodes = net.mlp.forward(&mut g, input, true)?;
            let target = g.leaf(Tensor::new(vec![eps.len(), 3], eps.iter().flatten().copied().collect())?, false);
            let diff = g.sub(nodes.output, target)?;
            let sq = g.square(diff)?;
            let total = g.sum(sq)?;
            let loss = g.scale(total, T::one() / T::lit(x0.len() as f64))?;
            let lv = g.value(loss).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor<T>> =
                nodes.params.iter().map(|&p| grads.take(p).expect("parameter gradient")).collect();
            adam.step(&mut net.mlp.params_mut(), &grads)?;
            sum += lv;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("diffusion epoch {epoch}: loss {mean:.5}");
        trace.epoch_loss.push(mean);
    }
    Ok((net, trace))
}
