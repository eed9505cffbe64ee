use crate::{Vec3, Volume};

/// Per-point conditioning features drawn from a volume.
pub trait FeatureEncoder: Sync {
    /// Number of features per query point.
    fn dim(&self) -> usize;

    /// Writes `dim()` features for world point `p` into `out`.
    fn encode(&self, v: &Volume, p: &Vec3, out: &mut [f64]);
}

/// Intensity, central-difference gradient (one voxel step, per mm) and the
/// mean of the surrounding 3×3×3 voxel-step stencil.
#[derive(Debug, Clone, Copy, Default)]
pub struct HandcraftedEncoder;

impl FeatureEncoder for HandcraftedEncoder {
    fn dim(&self) -> usize {
        5
    }

    fn encode(&self, v: &Volume, p: &Vec3, out: &mut [f64]) {
        let s = v.spacing();
        let at = |q: Vec3| v.sample(&q).expect("clamped sampling is total");
        out[0] = at(*p);
        for a in 0..3 {
            let mut d = Vec3::zeros();
            d[a] = s[a];
            out[1 + a] = (at(p + d) - at(p - d)) / (2.0 * s[a]);
        }
        let mut sum = 0.0;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    sum += at(p + Vec3::new(dx as f64 * s[0], dy as f64 * s[1], dz as f64 * s[2]));
                }
            }
        }
        out[4] = sum / 27.0;
    }
}
