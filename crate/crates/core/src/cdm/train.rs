use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_noise, gaussian, time_embedding, FeatureEncoder, Mlp, MlpShape, NoiseSchedule, TIME_DIM};
use crate::centerline::denormalize;
use crate::{CenterlineImage, CenterlinePolyline, Error, Result, Volume};

/// Noise prediction `ε_θ(x_t, t, f)`.
pub trait NoisePredictor: Sync {
    fn predict(&self, x: &[f64], t: usize, features: &[f64]) -> Vec<f64>;
}

fn model_input(x: &[f64], t: usize, features: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(x.len() + features.len() + TIME_DIM);
    input.extend_from_slice(x);
    input.extend_from_slice(features);
    input.extend_from_slice(&time_embedding(t));
    input
}

impl NoisePredictor for Mlp {
    fn predict(&self, x: &[f64], t: usize, features: &[f64]) -> Vec<f64> {
        self.forward(&model_input(x, t, features))
    }
}

/// Always predicts zero noise.
pub struct ZeroDenoiser;

impl NoisePredictor for ZeroDenoiser {
    fn predict(&self, x: &[f64], _: usize, _: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// Returns the noise that maps a known clean image to the current state.
pub struct OracleDenoiser {
    pub x0: Vec<f64>,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for OracleDenoiser {
    fn predict(&self, x: &[f64], t: usize, _: &[f64]) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        x.iter().zip(&self.x0).map(|(xt, x0)| (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect()
    }
}

/// Features of every row of a flat `k × 3` image, looked up at the rows'
/// world positions inside `v`.
pub fn point_features(encoder: &dyn FeatureEncoder, v: &Volume, x: &[f64]) -> Vec<f64> {
    let bounds = v.bounds();
    let d = encoder.dim();
    let mut out = vec![0.0; x.len() / 3 * d];
    for (row, slot) in x.chunks_exact(3).zip(out.chunks_exact_mut(d)) {
        let p = denormalize(&[row[0], row[1], row[2]], &bounds);
        encoder.encode(v, &p, slot);
    }
    out
}

/// Training pairs: each centerline image refers to one of the volumes.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub volumes: Vec<Volume>,
    pub items: Vec<(usize, CenterlineImage)>,
}

impl Dataset {
    pub fn push(&mut self, v: Volume, c: &CenterlinePolyline) -> Result<()> {
        let ci = CenterlineImage::encode(c, &v.bounds())?;
        if let Some((_, first)) = self.items.first() {
            if first.len() != ci.len() {
                return Err(Error::CountMismatch(first.len(), ci.len()));
            }
        }
        self.volumes.push(v);
        self.items.push((self.volumes.len() - 1, ci));
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.items.first().map_or(0, |(_, c)| c.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: [usize; 2],
    /// Cosine decay of the learning rate from its initial value to 1%.
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            batch_size: 16,
            iterations: 5000,
            seed: 0,
            hidden: [256, 256],
            lr_decay: true,
        }
    }
}

/// One training draw: dataset item, timestep and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnSample {
    pub item: usize,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Batch draws with timesteps stratified over `1..=T` (each slot covers one
/// of `batch` equal bands) so every batch spans the schedule.
fn draw_batch<R: Rng>(rng: &mut R, n_items: usize, dim: usize, batch: usize, steps: usize) -> Vec<DrawnSample> {
    (0..batch)
        .map(|i| {
            let item = rng.random_range(0..n_items);
            let u = (i as f64 + rng.random::<f64>()) / batch as f64;
            let t = ((u * steps as f64) as usize).min(steps - 1) + 1;
            DrawnSample { item, t, eps: gaussian(rng, dim) }
        })
        .collect()
}

/// Mean over the batch of the per-sample noise MSE, with its gradient.
/// Per-sample gradients are computed in parallel and summed in batch order.
pub fn batch_loss(
    model: &Mlp,
    encoder: &dyn FeatureEncoder,
    data: &Dataset,
    sched: &NoiseSchedule,
    draws: &[DrawnSample],
) -> Result<(f64, Vec<f64>)> {
    if draws.is_empty() {
        return Err(Error::EmptySet);
    }
    let scale = 1.0 / draws.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = draws
        .par_iter()
        .map(|d| {
            let (vi, ci) = &data.items[d.item];
            let xt = forward_noise(&ci.flat(), d.t, &d.eps, sched)?;
            let f = point_features(encoder, &data.volumes[*vi], &xt);
            let mut g = vec![0.0; model.params().len()];
            let mse = model.mse_backward(&model_input(&xt, d.t, &f), &d.eps, scale, &mut g);
            Ok((mse, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.params().len()];
    for part in parts {
        let (l, g) = part?;
        loss += l * scale;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    /// Batch loss at every iteration.
    pub losses: Vec<f64>,
    /// Mean loss of each block of 100 iterations.
    pub smoothed: Vec<f64>,
}

/// Adam training on the noise-prediction objective. Aborts when the loss
/// stays above ten times its initial value for 500 consecutive iterations.
pub fn train(
    data: &Dataset,
    encoder: &dyn FeatureEncoder,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.items.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(Error::Invalid("learning rate, batch size and moment rates must be positive".into()));
    }
    let dim = 3 * data.k();
    let shape = MlpShape { input: dim + encoder.dim() * data.k() + TIME_DIM, hidden: cfg.hidden, output: dim };
    let mut model = Mlp::new(shape, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let n = model.params().len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut initial = None;
    let mut above = 0usize;
    for it in 0..cfg.iterations {
        let draws = draw_batch(&mut rng, data.items.len(), dim, cfg.batch_size, sched.steps);
        let (loss, grad) = batch_loss(&model, encoder, data, sched, &draws)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss, initial: initial.unwrap_or(f64::NAN) });
        }
        let first = *initial.get_or_insert(loss);
        above = if loss > 10.0 * first { above + 1 } else { 0 };
        if above >= 500 {
            return Err(Error::Diverged { iteration: it, loss, initial: first });
        }
        losses.push(loss);
        let lr = if cfg.lr_decay {
            let progress = it as f64 / cfg.iterations.max(1) as f64;
            cfg.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
        } else {
            cfg.learning_rate
        };
        let step = (it + 1) as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(step), 1.0 - cfg.beta2.powi(step));
        for (((p, g), m), v) in model.params_mut().iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
    let smoothed = losses.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    Ok(TrainOutcome { model, losses, smoothed })
}

/// Reverse diffusion from unit Gaussian noise. Features are looked up at the
/// current positions every step; `stochastic = false` sets every `z` to 0.
pub fn sample<P: NoisePredictor + ?Sized, R: Rng>(
    v: &Volume,
    encoder: &dyn FeatureEncoder,
    model: &P,
    sched: &NoiseSchedule,
    k: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<CenterlineImage> {
    let mut x = gaussian(rng, 3 * k);
    for t in (1..=sched.steps).rev() {
        let f = point_features(encoder, v, &x);
        let eps = model.predict(&x, t, &f);
        let (a, ab, b) = (sched.alpha(t), sched.alpha_bar(t), sched.beta(t));
        let coef = b / (1.0 - ab).sqrt();
        let z = if stochastic && t > 1 { gaussian(rng, 3 * k) } else { vec![0.0; 3 * k] };
        let sigma = sched.sigma(t);
        for i in 0..x.len() {
            x[i] = (x[i] - coef * eps[i]) / a.sqrt() + sigma * z[i];
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::SamplingBlewUp(t));
        }
    }
    Ok(CenterlineImage::from_flat(&x))
}

#[cfg(test)]
mod tests {
    use super::super::HandcraftedEncoder;
    use super::*;
    use crate::phantom::{PhantomShape, PhantomSpec};

    fn small_spec(radius: f64) -> PhantomSpec {
        PhantomSpec {
            dims: [24; 3],
            spacing: [1.5; 3],
            length: 20.0,
            base_radius: radius,
            ..PhantomSpec::preset(PhantomShape::Straight)
        }
    }

    fn tiny_dataset(n: usize) -> Dataset {
        let mut d = Dataset::default();
        for i in 0..n {
            let spec = small_spec(3.0 + 0.2 * i as f64);
            d.push(spec.rasterize().unwrap(), &spec.analytic_centerline(8).unwrap()).unwrap();
        }
        d
    }

    #[test]
    fn oracle_and_zero_losses() {
        let data = tiny_dataset(1);
        let sched = NoiseSchedule::scaled(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = draw_batch(&mut rng, 1, 24, 4000, sched.steps);
        let mse = |pred: &dyn Fn(&DrawnSample) -> Vec<f64>| {
            draws.iter().map(|d| pred(d).iter().zip(&d.eps).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 24.0).sum::<f64>()
                / draws.len() as f64
        };
        let oracle = OracleDenoiser { x0: data.items[0].1.flat(), schedule: sched.clone() };
        let oracle_loss = mse(&|d| {
            let xt = forward_noise(&data.items[0].1.flat(), d.t, &d.eps, &sched).unwrap();
            oracle.predict(&xt, d.t, &[])
        });
        assert!(oracle_loss < 1e-20);
        let zero_loss = mse(&|d| ZeroDenoiser.predict(&d.eps, d.t, &[]));
        assert!((zero_loss - 1.0).abs() < 0.05, "{zero_loss}");
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let data = tiny_dataset(3);
        let sched = NoiseSchedule::scaled(50).unwrap();
        let enc = HandcraftedEncoder;
        let shape = MlpShape { input: 24 + 40 + TIME_DIM, hidden: [32, 32], output: 24 };
        let model = Mlp::new(shape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = draw_batch(&mut rng, 3, 24, 4, sched.steps);
        let (_, grad) = batch_loss(&model, &enc, &data, &sched, &draws).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let i = rng.random_range(0..grad.len());
            let mut p = model.clone();
            p.params_mut()[i] += h;
            let up = batch_loss(&p, &enc, &data, &sched, &draws).unwrap().0;
            p.params_mut()[i] -= 2.0 * h;
            let down = batch_loss(&p, &enc, &data, &sched, &draws).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(2);
        let sched = NoiseSchedule::scaled(50).unwrap();
        let cfg = TrainConfig { iterations: 30, hidden: [32, 32], batch_size: 4, seed: 3, ..TrainConfig::default() };
        let a = train(&data, &HandcraftedEncoder, &sched, &cfg).unwrap();
        let b = train(&data, &HandcraftedEncoder, &sched, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.losses, b.losses);
        assert!(train(&Dataset::default(), &HandcraftedEncoder, &sched, &cfg).is_err());
    }

    #[test]
    fn oracle_sampling_recovers_sample() {
        let data = tiny_dataset(1);
        let sched = NoiseSchedule::scaled(200).unwrap();
        let x0 = data.items[0].1.flat();
        let oracle = OracleDenoiser { x0: x0.clone(), schedule: sched.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = sample(&data.volumes[0], &HandcraftedEncoder, &oracle, &sched, 8, false, &mut rng).unwrap();
        for (a, b) in out.flat().iter().zip(&x0) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn zero_denoiser_stays_finite() {
        let data = tiny_dataset(1);
        let sched = NoiseSchedule::scaled(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = sample(&data.volumes[0], &HandcraftedEncoder, &ZeroDenoiser, &sched, 8, true, &mut rng).unwrap();
        assert!(a.flat().iter().all(|x| x.is_finite()));
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let s1 = sample(&data.volumes[0], &HandcraftedEncoder, &ZeroDenoiser, &sched, 8, true, &mut r1).unwrap();
        let s2 = sample(&data.volumes[0], &HandcraftedEncoder, &ZeroDenoiser, &sched, 8, true, &mut r2).unwrap();
        assert_eq!(s1, s2);
    }
}
