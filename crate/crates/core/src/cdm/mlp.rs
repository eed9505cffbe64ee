use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CDMCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: [usize; 2],
    pub output: usize,
}

impl MlpShape {
    fn layers(&self) -> [(usize, usize); 3] {
        [(self.input, self.hidden[0]), (self.hidden[0], self.hidden[1]), (self.hidden[1], self.output)]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Two-hidden-layer perceptron with SiLU activations. Parameters are stored
/// flat as `W1, b1, W2, b2, W3, b3` with row-major `out × in` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *slot = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl Mlp {
    /// Weights drawn from `N(0, 1/fan_in)`, zero biases.
    pub fn new(shape: MlpShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shape.param_count());
        for (n_in, n_out) in shape.layers() {
            let normal = Normal::new(0.0, (1.0 / n_in as f64).sqrt()).expect("positive std");
            params.extend((0..n_in * n_out).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Self { shape, params }
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::SizeMismatch { expected: shape.param_count(), actual: params.len() });
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, biases)` slices of each layer.
    fn split<'a>(&self, p: &'a [f64]) -> [(&'a [f64], &'a [f64]); 3] {
        let mut off = 0;
        self.shape.layers().map(|(n_in, n_out)| {
            let w = &p[off..off + n_in * n_out];
            let b = &p[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            (w, b)
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let [(w1, b1), (w2, b2), (w3, b3)] = self.split(&self.params);
        let [h1, h2] = self.shape.hidden;
        let mut z1 = vec![0.0; h1];
        affine(w1, b1, x, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
        let mut z2 = vec![0.0; h2];
        affine(w2, b2, &a1, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();
        let mut y = vec![0.0; self.shape.output];
        affine(w3, b3, &a2, &mut y);
        y
    }

    /// Mean squared error of the prediction against `target`; adds
    /// `scale · ∂mse/∂θ` into `grad`.
    pub fn mse_backward(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let [(w1, b1), (w2, b2), (w3, b3)] = self.split(&self.params);
        let [h1, h2] = self.shape.hidden;
        let out = self.shape.output;
        let mut z1 = vec![0.0; h1];
        affine(w1, b1, x, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
        let mut z2 = vec![0.0; h2];
        affine(w2, b2, &a1, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();
        let mut y = vec![0.0; out];
        affine(w3, b3, &a2, &mut y);

        let mse = y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out as f64;
        let dy: Vec<f64> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / out as f64 * scale).collect();

        let (n0, n1, n2) = (self.shape.input * h1, h1 * h2, h2 * out);
        let (g_w1, rest) = grad.split_at_mut(n0);
        let (g_b1, rest) = rest.split_at_mut(h1);
        let (g_w2, rest) = rest.split_at_mut(n1);
        let (g_b2, rest) = rest.split_at_mut(h2);
        let (g_w3, g_b3) = rest.split_at_mut(n2);

        let mut d2 = vec![0.0; h2];
        for o in 0..out {
            g_b3[o] += dy[o];
            let row = &mut g_w3[o * h2..(o + 1) * h2];
            let wrow = &w3[o * h2..(o + 1) * h2];
            for i in 0..h2 {
                row[i] += dy[o] * a2[i];
                d2[i] += dy[o] * wrow[i];
            }
        }
        for i in 0..h2 {
            d2[i] *= silu_grad(z2[i]);
        }
        let mut d1 = vec![0.0; h1];
        for o in 0..h2 {
            g_b2[o] += d2[o];
            let row = &mut g_w2[o * h1..(o + 1) * h1];
            let wrow = &w2[o * h1..(o + 1) * h1];
            for i in 0..h1 {
                row[i] += d2[o] * a1[i];
                d1[i] += d2[o] * wrow[i];
            }
        }
        for i in 0..h1 {
            d1[i] *= silu_grad(z1[i]);
        }
        let n_in = self.shape.input;
        for o in 0..h1 {
            g_b1[o] += d1[o];
            let row = &mut g_w1[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                row[i] += d1[o] * x[i];
            }
        }
        mse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Centerline points per sample.
    pub k: usize,
    pub feature_dim: usize,
    pub shape: MlpShape,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub n_params: usize,
}

/// Magic, little-endian `u32` header length, JSON header, then the
/// parameters as little-endian `f32`.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, model: &Mlp) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in &model.params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Mlp)> {
    let bytes = crate::error::read_bytes(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Parse("not a diffusion checkpoint".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| Error::Parse("truncated checkpoint header".into()))?;
    let mut header: CheckpointHeader = serde_json::from_slice(json)?;
    header.schedule = header.schedule.rebuilt()?;
    let payload = &bytes[12 + len..];
    if payload.len() != 4 * header.n_params || header.n_params != header.shape.param_count() {
        return Err(Error::SizeMismatch { expected: 4 * header.shape.param_count(), actual: payload.len() });
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let model = Mlp::from_params(header.shape, params)?;
    Ok((header, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> Mlp {
        Mlp::new(MlpShape { input: 7, hidden: [9, 6], output: 4 }, 3)
    }

    #[test]
    fn gradient_matches_finite_differences_in_every_block() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; m.params.len()];
        m.mse_backward(&x, &y, 1.0, &mut grad);
        let h = 1e-5;
        for i in 0..m.params.len() {
            let mut p = m.clone();
            p.params[i] += h;
            let up = p.mse_backward(&x, &y, 0.0, &mut vec![0.0; grad.len()]);
            p.params[i] -= 2.0 * h;
            let down = p.mse_backward(&x, &y, 0.0, &mut vec![0.0; grad.len()]);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn forward_agrees_with_backward_pass() {
        let m = small();
        let x = [0.1, -0.4, 0.3, 0.9, -1.0, 0.0, 0.5];
        let y = m.forward(&x);
        let mse = m.mse_backward(&x, &y, 1.0, &mut vec![0.0; m.params.len()]);
        assert_eq!(mse, 0.0);
        assert_eq!(y.len(), 4);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small();
        let header = CheckpointHeader {
            k: 16,
            feature_dim: 5,
            shape: m.shape(),
            schedule: NoiseSchedule::scaled(200).unwrap(),
            seed: 7,
            n_params: m.params.len(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &header, &m).unwrap();
        let (h, back) = read_checkpoint(&path).unwrap();
        assert_eq!(h, header);
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
