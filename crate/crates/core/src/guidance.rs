//! Classifier-guided reverse sampling.
//!
//! Each reverse step shifts the model mean by `λ · Σ_t · ∇ log p(plausible | x_t)`
//! before the Gaussian draw. The gradient is taken at the current noisy
//! state `x_t`. With `λ = 0` no gradient is computed at all, so the chain is
//! bit-identical to the unguided sampler under the same seed.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{PairScore, StructScore};
use crate::diffusion::{chain_rng, draw_reverse, initial_state, posterior_mean, NoiseSchedule, NoisePredictor, Placement};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, diversity_deltas, frechet_placement_distance};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Structural guidance scale.
    pub lambda: f64,
    /// Relational guidance scale (multi-object only).
    pub lambda_r: f64,
    pub seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { lambda: 0.01, lambda_r: 0.0, seed: 0 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda: must be a finite value >= 0, got {}", self.lambda)));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_r: must be a finite value >= 0, got {}", self.lambda_r)));
        }
        Ok(())
    }
}

fn finite3<T: Scalar>(g: &[T; 3]) -> bool {
    g.iter().all(|v| v.is_finite())
}

/// Gradient of the structural score at `x`, or `None` when guidance must be
/// skipped for this step (scale not positive, or a non-finite result).
fn struct_grad<T: Scalar>(guide: &(impl StructScore<T> + ?Sized), x: [T; 3], t: usize) -> Result<Option<[T; 3]>> {
    match guide.log_prob_and_grad(x) {
        Ok((lp, g)) if lp.is_finite() && finite3(&g) => Ok(Some(g)),
        Ok(_) => {
            log::warn!("non-finite guidance gradient at t={t}; step left unguided");
            Ok(None)
        }
        Err(Error::NonPositiveScale(_)) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn add_scaled<T: Scalar>(mu: &mut [T; 3], k: T, g: &[T; 3]) {
    for (m, gi) in mu.iter_mut().zip(g) {
        *m += k * *gi;
    }
}

/// One guided reverse step from `x_t` to `x_{t-1}`.
pub fn guided_sample_step<T: Scalar, R: Rng + ?Sized>(
    model: &impl NoisePredictor<T>,
    guide: &(impl StructScore<T> + ?Sized),
    x_t: [T; 3],
    t: usize,
    lambda: T,
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<[T; 3]> {
    sched.check_t(t)?;
    let eps = model.predict_eps(&[x_t], &[t])?[0];
    let mut mu = posterior_mean(x_t, eps, t, sched);
    if lambda != T::zero() {
        if let Some(g) = struct_grad(guide, x_t, t)? {
            add_scaled(&mut mu, lambda * sched.sigma(t), &g);
        }
    }
    Ok(draw_reverse(mu, t, sched, rng))
}

/// `n` guided chains for one (scene, object) pair; chain `i` draws from
/// [`chain_rng`]`(base_seed, i)` exactly as the unguided sampler does.
pub fn sample_guided<T: Scalar>(
    model: &impl NoisePredictor<T>,
    guide: &(impl StructScore<T> + ?Sized),
    sched: &NoiseSchedule<T>,
    lambda: f64,
    n: usize,
    base_seed: u64,
) -> Result<Vec<Placement<T>>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let lambda = T::lit(lambda);
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|i| chain_rng(base_seed, i)).collect();
    let mut xs: Vec<[T; 3]> = rngs.iter_mut().map(|r| initial_state(r)).collect();
    for t in (1..=sched.steps()).rev() {
        if xs.is_empty() {
            break;
        }
        let eps = model.predict_eps(&xs, &vec![t; xs.len()])?;
        for ((x, e), rng) in xs.iter_mut().zip(eps).zip(rngs.iter_mut()) {
            let mut mu = posterior_mean(*x, e, t, sched);
            if lambda != T::zero() {
                if let Some(g) = struct_grad(guide, *x, t)? {
                    add_scaled(&mut mu, lambda * sched.sigma(t), &g);
                }
            }
            *x = draw_reverse(mu, t, sched, rng);
        }
    }
    Ok(xs.into_iter().map(Placement::from_array).collect())
}

/// Bookkeeping from a multi-object run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiTrace {
    /// Relational evaluations per reverse step, in step order (t = T first).
    pub pairs_per_step: Vec<usize>,
}

/// All unordered index pairs `(i, j)`, `i < j`.
pub fn object_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
}

/// Joint placement of `k ≥ 2` objects in one scene. Object `j` owns the
/// substream [`chain_rng`]`(base_seed, j)`; all chains advance in lockstep.
/// Each mean gets its own structural shift plus the relational gradients of
/// every pair it belongs to. With `λ_r = 0` no pair is evaluated and each
/// object follows its single-object guided trajectory.
pub fn sample_multi<T: Scalar>(
    model: &impl NoisePredictor<T>,
    guides: &[&dyn StructScore<T>],
    rel: &(impl PairScore<T> + ?Sized),
    sched: &NoiseSchedule<T>,
    cfg: &GuidanceConfig,
) -> Result<(Vec<Placement<T>>, MultiTrace)> {
    cfg.validate()?;
    let k = guides.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("multi-object sampling needs at least 2 objects, got {k}")));
    }
    let (lambda, lambda_r) = (T::lit(cfg.lambda), T::lit(cfg.lambda_r));
    let pairs = object_pairs(k);
    let mut rngs: Vec<ChaCha8Rng> = (0..k as u64).map(|j| chain_rng(cfg.seed, j)).collect();
    let mut xs: Vec<[T; 3]> = rngs.iter_mut().map(|r| initial_state(r)).collect();
    let mut trace = MultiTrace::default();
    for t in (1..=sched.steps()).rev() {
        let eps = model.predict_eps(&xs, &vec![t; k])?;
        let sigma = sched.sigma(t);
        let mut mus: Vec<[T; 3]> = xs.iter().zip(&eps).map(|(x, e)| posterior_mean(*x, *e, t, sched)).collect();
        if lambda != T::zero() {
            for (j, guide) in guides.iter().enumerate() {
                if let Some(g) = struct_grad(*guide, xs[j], t)? {
                    add_scaled(&mut mus[j], lambda * sigma, &g);
                }
            }
        }
        let mut evaluated = 0;
        if lambda_r != T::zero() {
            let mut shifts = vec![[T::zero(); 3]; k];
            for &(a, b) in &pairs {
                evaluated += 1;
                match rel.log_prob_and_grad(xs[a], xs[b]) {
                    Ok((lp, ga, gb)) if lp.is_finite() && finite3(&ga) && finite3(&gb) => {
                        add_scaled(&mut shifts[a], T::one(), &ga);
                        add_scaled(&mut shifts[b], T::one(), &gb);
                    }
                    Ok(_) | Err(Error::NonFinite(_)) => log::warn!("non-finite relational gradient at t={t}; pair ({a}, {b}) skipped"),
                    Err(e) => return Err(e),
                }
            }
            for (mu, s) in mus.iter_mut().zip(&shifts) {
                add_scaled(mu, lambda_r * sigma, s);
            }
        }
        trace.pairs_per_step.push(evaluated);
        for ((x, mu), rng) in xs.iter_mut().zip(mus).zip(rngs.iter_mut()) {
            *x = draw_reverse(mu, t, sched, rng);
        }
    }
    Ok((xs.into_iter().map(Placement::from_array).collect(), trace))
}

/// One (scene, object) evaluation target in a sweep.
pub struct SweepTask<'a, T> {
    pub guide: &'a dyn StructScore<T>,
    /// Plausibility judge for this task's samples.
    pub judge: &'a dyn Fn(Placement<f64>) -> bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub fpd: f64,
    pub ds: f64,
    pub dh: f64,
    pub dv: f64,
}

/// Seed for task `i` of a sweep: disjoint chain ranges per task.
pub fn task_seed(base_seed: u64, task: usize) -> u64 {
    base_seed.wrapping_add((task as u64) << 32)
}

/// Samples every task at each `λ` and scores the pooled samples: accuracy
/// under each task's judge, Fréchet distance to `reference`, and diversity
/// over tasks. The same seeds are reused for every `λ`.
pub fn sweep_lambda<T: Scalar>(
    model: &impl NoisePredictor<T>,
    sched: &NoiseSchedule<T>,
    tasks: &[SweepTask<'_, T>],
    lambdas: &[f64],
    per_task: usize,
    base_seed: u64,
    reference: &[Placement<f64>],
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda list".into()));
    }
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("no sweep tasks".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut judged = Vec::new();
        let mut all = Vec::new();
        let mut groups = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            let samples: Vec<Placement<f64>> = sample_guided(model, task.guide, sched, lambda, per_task, task_seed(base_seed, i))?
                .into_iter()
                .map(|p| p.cast::<f64>())
                .collect();
            judged.extend(samples.iter().map(|&p| p.is_finite() && (task.judge)(p)));
            all.extend(samples.iter().copied().filter(|p| p.is_finite()));
            groups.push(samples);
        }
        let (ds, dh, dv) = diversity_deltas(&groups)?;
        rows.push(SweepRow { lambda, accuracy: accuracy(&judged)?, fpd: frechet_placement_distance(&all, reference)?, ds, dh, dv });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Corrupt { path: path.to_path_buf(), line: i + 2, msg: e.to_string() }))
        .collect()
}
