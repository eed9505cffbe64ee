//! Scalar volumes: storage, index/world mapping, trilinear sampling and the
//! raw + JSON sidecar file format.
//!
//! Voxel `(x, y, z)` is stored at `x + nx * (y + ny * z)` and its center sits
//! at `origin + index * spacing` in world millimetres.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Out-of-bounds handling for [`Volume::sample_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Clamp the query onto the voxel-center bounding box.
    #[default]
    Clamp,
    /// Reject queries outside the voxel-center bounding box.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f64>,
}

/// Axis-aligned world box spanned by the voxel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Invalid(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid(format!("volume spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("volume origin"));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: data.len() });
        }
        Ok(Self { dims, spacing, origin, data })
    }

    /// Builds a volume by evaluating `f` at every voxel center.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        mut f: impl FnMut(Vec3) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(Vec3::new(
                        origin[0] + x as f64 * spacing[0],
                        origin[1] + y as f64 * spacing[1],
                        origin[2] + z as f64 * spacing[2],
                    )));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.linear_index(x, y, z)]
    }

    pub fn index_to_world(&self, x: usize, y: usize, z: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        )
    }

    /// Continuous index coordinates of a world point (voxel centers are integers).
    pub fn world_to_index(&self, p: &Vec3) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn bounds(&self) -> Bounds {
        let hi = std::array::from_fn(|a| self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a]);
        Bounds { lo: self.origin, hi }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trilinear interpolation with clamp-to-edge boundary handling.
    pub fn sample(&self, p: &Vec3) -> Result<f64> {
        self.sample_with(p, Boundary::Clamp)
    }

    pub fn sample_with(&self, p: &Vec3, boundary: Boundary) -> Result<f64> {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::NonFinite("sample point"));
        }
        let ci = self.world_to_index(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let top = (n - 1) as f64;
            if boundary == Boundary::Strict && (ci[a] < -1e-9 || ci[a] > top + 1e-9) {
                return Err(Error::OutOfBounds(p.x, p.y, p.z));
            }
            let mut c = ci[a].clamp(0.0, top);
            // world -> index rounding can leave a voxel center a few ulp off the lattice
            if (c - c.round()).abs() <= 1e-9 {
                c = c.round();
            }
            if n == 1 {
                continue;
            }
            let i0 = (c.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = c - i0 as f64;
        }
        Ok(self.trilinear(base, frac))
    }

    fn trilinear(&self, base: [usize; 3], frac: [f64; 3]) -> f64 {
        let step = |a: usize| usize::from(self.dims[a] > 1);
        let (x0, y0, z0) = (base[0], base[1], base[2]);
        let (x1, y1, z1) = (x0 + step(0), y0 + step(1), z0 + step(2));
        let [fx, fy, fz] = frac;
        // (1 - t) * a + t * b is exact at t = 0 and t = 1, so voxel centers
        // reproduce their stored values bit for bit.
        let lerp = |a: f64, b: f64, t: f64| (1.0 - t) * a + t * b;
        let c00 = lerp(self.get(x0, y0, z0), self.get(x1, y0, z0), fx);
        let c10 = lerp(self.get(x0, y1, z0), self.get(x1, y1, z0), fx);
        let c01 = lerp(self.get(x0, y0, z1), self.get(x1, y0, z1), fx);
        let c11 = lerp(self.get(x0, y1, z1), self.get(x1, y1, z1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    /// Affine rescale of the data onto [0, 1].
    pub fn normalize(&self) -> Result<Volume> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return Err(Error::ConstantVolume);
        }
        let scale = hi - lo;
        let data = self
            .data
            .iter()
            .map(|&v| ((v - lo) / scale).clamp(0.0, 1.0))
            .collect();
        Ok(Volume { data, ..self.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    /// Writes the payload to `path` and the JSON sidecar to `header_path`.
    pub fn store_raw(&self, path: &Path, header_path: &Path, dtype: Dtype) -> Result<()> {
        let header = RawHeader {
            dims: self.dims,
            spacing_mm: self.spacing,
            origin_mm: self.origin,
            dtype: dtype.tag().to_string(),
        };
        let mut bytes = Vec::with_capacity(self.data.len() * dtype.width());
        match dtype {
            Dtype::F32Le => self.data.iter().for_each(|&v| bytes.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64Le => self.data.iter().for_each(|&v| bytes.extend_from_slice(&v.to_le_bytes())),
        }
        fs::write(path, bytes)?;
        fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    pub fn load_raw(path: &Path, header_path: &Path) -> Result<Volume> {
        let header: RawHeader = serde_json::from_str(&crate::error::read_text(header_path)?)?;
        let dtype = Dtype::from_tag(&header.dtype)?;
        let bytes = crate::error::read_bytes(path)?;
        let expected = header.dims.iter().product::<usize>();
        if bytes.len() % dtype.width() != 0 || bytes.len() / dtype.width() != expected {
            return Err(Error::SizeMismatch { expected, actual: bytes.len() / dtype.width() });
        }
        let data = match dtype {
            Dtype::F32Le => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64Le => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Volume::new(header.dims, header.spacing_mm, header.origin_mm, data)
    }
}

/// Payload element type of a raw volume file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    F32Le,
    F64Le,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32le",
            Dtype::F64Le => "f64le",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "f32le" => Ok(Dtype::F32Le),
            "f64le" => Ok(Dtype::F64Le),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
}

/// Sidecar path convention: `name.f32raw` pairs with `name.json`.
pub fn header_path_for(payload: &Path) -> std::path::PathBuf {
    payload.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn affine_volume(a: f64, b: f64, c: f64, d: f64) -> Volume {
        Volume::from_fn([6, 5, 4], [0.5, 1.0, 2.0], [-1.0, 2.0, 0.5], |p| a * p.x + b * p.y + c * p.z + d).unwrap()
    }

    #[test]
    fn constant_volume_samples_constant() {
        let v = Volume::from_fn([4, 4, 4], [1.0; 3], [0.0; 3], |_| 2.5).unwrap();
        for p in [Vec3::new(0.3, 1.7, 2.2), Vec3::new(-5.0, 9.0, 1.0)] {
            assert_eq!(v.sample(&p).unwrap(), 2.5);
        }
    }

    #[test]
    fn x_field_reproduced() {
        let v = Volume::from_fn([4, 4, 4], [1.0; 3], [0.0; 3], |p| p.x).unwrap();
        let s = v.sample(&Vec3::new(1.7, 0.4, 2.9)).unwrap();
        assert!((s - 1.7).abs() <= 1e-12);
    }

    #[test]
    fn two_cube_cell_center_is_mean() {
        let v = Volume::new([2, 2, 2], [1.0; 3], [0.0; 3], (0..8).map(f64::from).collect()).unwrap();
        let s = v.sample(&Vec3::new(0.5, 0.5, 0.5)).unwrap();
        // direct trilinear formula: every corner weight is 1/8
        let oracle: f64 = (0..8).map(|i| i as f64 * 0.125).sum();
        assert!((s - oracle).abs() < 1e-15);
        assert_eq!(oracle, 3.5);
    }

    #[test]
    fn voxel_centers_reproduce_values() {
        let v = Volume::from_fn([5, 4, 3], [0.8, 0.8, 0.3], [1.0, -2.0, 3.0], |p| (p.x * 1.3).sin() + p.y * p.z).unwrap();
        for z in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    assert_eq!(v.sample(&v.index_to_world(x, y, z)).unwrap(), v.get(x, y, z));
                }
            }
        }
    }

    #[test]
    fn clamp_matches_face_projection() {
        let v = affine_volume(1.0, -2.0, 0.5, 3.0);
        let b = v.bounds();
        let outside = Vec3::new(b.hi[0] + 3.0, 3.1, b.lo[2] - 7.0);
        let projected = Vec3::new(b.hi[0], 3.1, b.lo[2]);
        assert_eq!(v.sample(&outside).unwrap(), v.sample(&projected).unwrap());
        assert!(matches!(v.sample_with(&outside, Boundary::Strict), Err(Error::OutOfBounds(..))));
    }

    #[test]
    fn non_finite_rejected() {
        let v = affine_volume(1.0, 0.0, 0.0, 0.0);
        assert!(matches!(v.sample(&Vec3::new(f64::NAN, 0.0, 0.0)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn normalize_cases() {
        let v = Volume::new([2, 1, 1], [1.0; 3], [0.0; 3], vec![2.0, 4.0]).unwrap();
        assert_eq!(v.normalize().unwrap().data(), &[0.0, 1.0]);
        let v = Volume::new([3, 1, 1], [1.0; 3], [0.0; 3], vec![-1.0, 0.0, 3.0]).unwrap();
        assert_eq!(v.normalize().unwrap().data(), &[0.0, 0.25, 1.0]);
        let v = Volume::new([3, 1, 1], [1.0; 3], [0.0; 3], vec![0.0, 0.3, 1.0]).unwrap();
        assert_eq!(v.normalize().unwrap().data(), v.data());
        let v = Volume::new([3, 1, 1], [1.0; 3], [0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(v.normalize(), Err(Error::ConstantVolume)));
    }

    #[test]
    fn raw_size_mismatch_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let payload = dir.path().join("v.f32raw");
        let header = dir.path().join("v.json");
        fs::write(&payload, vec![0u8; 7 * 4]).unwrap();
        fs::write(&header, r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"f32le"}"#).unwrap();
        assert!(matches!(
            Volume::load_raw(&payload, &header),
            Err(Error::SizeMismatch { expected: 8, actual: 7 })
        ));
        fs::write(&header, r#"{"dims":[7,1,1],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"u8"}"#).unwrap();
        assert!(matches!(Volume::load_raw(&payload, &header), Err(Error::UnknownDtype(_))));
    }

    #[test]
    fn raw_round_trip_keeps_spacing_exact() {
        let dir = tempfile::tempdir().unwrap();
        let payload = dir.path().join("v.f32raw");
        let header = header_path_for(&payload);
        let v = Volume::from_fn([3, 3, 3], [0.8, 0.8, 0.3], [0.0; 3], |p| (p.x + p.z) as f32 as f64).unwrap();
        v.store_raw(&payload, &header, Dtype::F32Le).unwrap();
        let back = Volume::load_raw(&payload, &header).unwrap();
        assert_eq!(back.spacing(), [0.8, 0.8, 0.3]);
        assert_eq!(back, v);
    }

    #[test]
    fn volume_is_shareable_across_threads() {
        fn assert_sync<T: Send + Sync>() {}
        assert_sync::<Volume>();
        let v = std::sync::Arc::new(affine_volume(1.0, 2.0, 3.0, 4.0));
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let v = v.clone();
                std::thread::spawn(move || v.sample(&Vec3::new(0.1 * i as f64, 2.5, 1.0)).unwrap())
            })
            .collect();
        for (i, h) in handles.into_iter().enumerate() {
            let expected = 0.1 * i as f64 + 2.0 * 2.5 + 3.0 + 4.0;
            assert!((h.join().unwrap() - expected).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn affine_fields_reproduced(
            a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -5.0..5.0f64,
            fx in 0.0..1.0f64, fy in 0.0..1.0f64, fz in 0.0..1.0f64,
        ) {
            let v = affine_volume(a, b, c, d);
            let bb = v.bounds();
            let p = Vec3::new(
                bb.lo[0] + fx * (bb.hi[0] - bb.lo[0]),
                bb.lo[1] + fy * (bb.hi[1] - bb.lo[1]),
                bb.lo[2] + fz * (bb.hi[2] - bb.lo[2]),
            );
            let expected = a * p.x + b * p.y + c * p.z + d;
            prop_assert!((v.sample(&p).unwrap() - expected).abs() <= 1e-12);
        }
    }
}
