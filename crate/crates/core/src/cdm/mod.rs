//! Volume-conditioned denoising diffusion over normalized centerline images.
//!
//! A small perceptron predicts the noise added to a `k × 3` centerline image
//! from the noisy image, a sinusoidal time embedding and per-point volume
//! features looked up at the current (noisy) point positions.

mod features;
mod mlp;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use features::{FeatureEncoder, HandcraftedEncoder};
pub use mlp::{read_checkpoint, write_checkpoint, CheckpointHeader, Mlp, MlpShape};
pub use train::{
    batch_loss, point_features, sample, train, Dataset, DrawnSample, NoisePredictor, OracleDenoiser, TrainConfig,
    TrainOutcome, ZeroDenoiser,
};

/// Width of the sinusoidal time embedding.
pub const TIME_DIM: usize = 16;

/// Linear β schedule on steps `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(skip)]
    betas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Invalid(format!(
                "need T >= 2 and 0 < beta_start < beta_end < 1, got T={steps}, {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let last = *alpha_bars.last().expect("seeded");
            alpha_bars.push(last * (1.0 - b));
        }
        Ok(Self { steps, beta_start, beta_end, betas, alpha_bars })
    }

    /// The 1e-4..0.02 range defined for 1000 steps, rescaled by `1000 / T` so
    /// that shorter schedules destroy the signal to the same degree.
    pub fn scaled(steps: usize) -> Result<Self> {
        let s = 1000.0 / steps as f64;
        Self::linear(steps, 1e-4 * s, 0.02 * s)
    }

    /// Rebuilds the derived tables after deserialization.
    pub fn rebuilt(&self) -> Result<Self> {
        Self::linear(self.steps, self.beta_start, self.beta_end)
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::TimestepRange { t, max: self.steps });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product of `alpha` up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }
}

/// `sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·ε`.
pub fn forward_noise(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::SizeMismatch { expected: x0.len(), actual: eps.len() });
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Sine/cosine pairs of `t` at geometrically spaced frequencies.
pub fn time_embedding(t: usize) -> [f64; TIME_DIM] {
    let half = TIME_DIM / 2;
    let mut out = [0.0; TIME_DIM];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    out
}
