use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{normal3, NoisePredictor};
use super::placement::Placement;
use super::schedule::NoiseSchedule;
use crate::error::Result;
use crate::scalar::Scalar;

/// Generator for chain `index` of a run seeded with `base_seed`.
pub fn chain_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index))
}

/// `μ_θ = (x_t − β_t / √(1 − ᾱ_t) · ε̂) / √α_t`.
pub fn posterior_mean<T: Scalar>(x_t: [T; 3], eps: [T; 3], t: usize, sched: &NoiseSchedule<T>) -> [T; 3] {
    let coef = sched.beta(t) / (T::one() - sched.alpha_bar(t)).sqrt();
    let root = sched.alpha(t).sqrt();
    [(x_t[0] - coef * eps[0]) / root, (x_t[1] - coef * eps[1]) / root, (x_t[2] - coef * eps[2]) / root]
}

/// Draws `x_{t-1} ~ N(mean, Σ_t)`; returns `mean` untouched at `t = 1`.
pub fn draw_reverse<T: Scalar, R: Rng + ?Sized>(mean: [T; 3], t: usize, sched: &NoiseSchedule<T>, rng: &mut R) -> [T; 3] {
    if t == 1 {
        return mean;
    }
    let sd = sched.sigma(t).sqrt();
    let z: [T; 3] = normal3(rng);
    [mean[0] + sd * z[0], mean[1] + sd * z[1], mean[2] + sd * z[2]]
}

pub fn initial_state<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> [T; 3] {
    normal3(rng)
}

/// One ancestral reverse step.
pub fn p_sample_step<T: Scalar, R: Rng + ?Sized>(
    model: &impl NoisePredictor<T>,
    x_t: [T; 3],
    t: usize,
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<[T; 3]> {
    sched.check_t(t)?;
    let eps = model.predict_eps(&[x_t], &[t])?[0];
    Ok(draw_reverse(posterior_mean(x_t, eps, t, sched), t, sched, rng))
}

/// `n` independent chains from `x_T ~ N(0, I)`; chain `i` uses
/// [`chain_rng`]`(base_seed, i)`. Chains are batched through the network but
/// produce the same values as running each alone.
pub fn sample_unguided<T: Scalar>(
    model: &impl NoisePredictor<T>,
    sched: &NoiseSchedule<T>,
    n: usize,
    base_seed: u64,
) -> Result<Vec<Placement<T>>> {
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|i| chain_rng(base_seed, i)).collect();
    let mut xs: Vec<[T; 3]> = rngs.iter_mut().map(|r| initial_state(r)).collect();
    for t in (1..=sched.steps()).rev() {
        if xs.is_empty() {
            break;
        }
        let eps = model.predict_eps(&xs, &vec![t; xs.len()])?;
        for ((x, e), rng) in xs.iter_mut().zip(eps).zip(rngs.iter_mut()) {
            *x = draw_reverse(posterior_mean(*x, e, t, sched), t, sched, rng);
        }
    }
    Ok(xs.into_iter().map(Placement::from_array).collect())
}
