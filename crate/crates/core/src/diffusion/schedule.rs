use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Endpoints of a linear β schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    /// DDPM's 1e-4..0.02 over 1000 steps, rescaled by `1000 / steps`.
    pub fn rescaled_default(steps: usize) -> Self {
        let k = 1000.0 / steps as f64;
        Self { steps, beta_start: 1e-4 * k, beta_end: 0.02 * k }
    }
}

/// Linear variance schedule with precomputed cumulative products.
///
/// Timesteps are 1-based: `t ∈ 1..=T`, and `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<T> {
    spec: ScheduleSpec,
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
    posterior_var: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::from_spec(ScheduleSpec { steps, beta_start, beta_end })
    }

    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        let ScheduleSpec { steps, beta_start, beta_end } = spec;
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<T> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    T::lit(beta_start)
                } else {
                    T::lit(beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                }
            })
            .collect();
        let alphas: Vec<T> = betas.iter().map(|&b| T::one() - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = T::one();
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        // Σ_1 would be 0 under the posterior formula; β_1 is used instead so
        // that the guidance shift at the final step stays defined.
        let posterior_var = (0..steps)
            .map(|i| {
                if i == 0 {
                    betas[0]
                } else {
                    betas[i] * (T::one() - alpha_bars[i - 1]) / (T::one() - alpha_bars[i])
                }
            })
            .collect();
        Ok(Self { spec, betas, alphas, alpha_bars, posterior_var })
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> T {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Reverse-step variance `Σ_t`.
    pub fn sigma(&self, t: usize) -> T {
        self.posterior_var[t - 1]
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }
}
