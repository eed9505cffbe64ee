//! Cross-sections of a volume on planes orthogonal to the centerline, and
//! the mapping of in-plane points back to world space.
//!
//! Pixel `(i, j)` (column `i` along `b`, row `j` along `n`) has in-plane
//! coordinates `((i - c)·ds, (j - c)·ds, 0)` with `c = (n_pix - 1) / 2`, and
//! samples the volume at `R · l + g` where `R = [b n t]` and `g` is the anchor.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centerline::LocalFrame;
use crate::lumenseg::{Contour, ContourSpace};
use crate::{Error, Result, Vec3, Volume};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    pub frame: LocalFrame,
    pub half_extent: f64,
    pub n_pix: usize,
}

impl SlicePlane {
    pub fn new(frame: LocalFrame, half_extent: f64, n_pix: usize) -> Result<Self> {
        if n_pix < 16 {
            return Err(Error::Invalid(format!("slice resolution must be at least 16, got {n_pix}")));
        }
        if !(half_extent > 0.0) {
            return Err(Error::Invalid(format!("slice half extent must be positive, got {half_extent}")));
        }
        if frame.orthonormality_error() > ORTHONORMAL_TOL {
            return Err(Error::Invalid("slice frame is not orthonormal".into()));
        }
        Ok(Self { frame, half_extent, n_pix })
    }

    pub fn pixel_spacing(&self) -> f64 {
        2.0 * self.half_extent / (self.n_pix - 1) as f64
    }

    pub fn center_index(&self) -> f64 {
        (self.n_pix - 1) as f64 / 2.0
    }

    /// In-plane millimetre coordinates of pixel `(i, j)`.
    pub fn pixel_to_plane(&self, i: f64, j: f64) -> (f64, f64) {
        let ds = self.pixel_spacing();
        let c = self.center_index();
        ((i - c) * ds, (j - c) * ds)
    }

    pub fn plane_to_world(&self, x: f64, y: f64) -> Vec3 {
        self.frame.to_world(&Vec3::new(x, y, 0.0))
    }

    pub fn pixel_to_world(&self, i: usize, j: usize) -> Vec3 {
        let (x, y) = self.pixel_to_plane(i as f64, j as f64);
        self.plane_to_world(x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub plane: SlicePlane,
    /// Row-major, `pixels[j * n_pix + i]`.
    pub pixels: Vec<f64>,
}

impl Slice {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[j * self.plane.n_pix + i]
    }

    /// ASCII PGM (P2) with intensities clamped to [0, 1] and scaled to 0..=65535.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let n = self.plane.n_pix;
        let mut s = format!("P2\n{n} {n}\n65535\n");
        for j in 0..n {
            let row: Vec<String> = (0..n)
                .map(|i| ((self.get(i, j).clamp(0.0, 1.0) * 65535.0).round() as u32).to_string())
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        fs::write(path, s)?;
        Ok(())
    }
}

/// Resamples `v` on `plane` with trilinear interpolation.
pub fn extract_slice(v: &Volume, plane: &SlicePlane) -> Slice {
    let n = plane.n_pix;
    let mut pixels = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            // plane points are finite by construction, so sampling cannot fail
            pixels.push(v.sample(&plane.pixel_to_world(i, j)).expect("finite plane point"));
        }
    }
    Slice { plane: *plane, pixels }
}

/// Slices for many stations in parallel; output order follows `planes`.
pub fn extract_slices(v: &Volume, planes: &[SlicePlane]) -> Vec<Slice> {
    planes.par_iter().map(|p| extract_slice(v, p)).collect()
}

/// Maps an in-plane contour (millimetres along `b`, `n`) to world space.
pub fn lift_to_3d(contour: &Contour, plane: &SlicePlane) -> Result<Contour> {
    if contour.space() != ContourSpace::Plane {
        return Err(Error::Invalid("lift expects an in-plane contour".into()));
    }
    let pts = contour.points().iter().map(|p| plane.plane_to_world(p.x, p.y)).collect();
    Contour::new(pts, ContourSpace::World)
}

/// Inverse of [`lift_to_3d`]: `Rᵀ (w − g)`, dropping the out-of-plane component.
pub fn project_to_plane(contour: &Contour, plane: &SlicePlane) -> Result<Contour> {
    if contour.space() != ContourSpace::World {
        return Err(Error::Invalid("projection expects a world contour".into()));
    }
    assert!(plane.frame.orthonormality_error() <= ORTHONORMAL_TOL, "R must be orthonormal for R^-1 = R^T");
    let pts = contour
        .points()
        .iter()
        .map(|w| {
            let l = plane.frame.to_local(w);
            Vec3::new(l.x, l.y, 0.0)
        })
        .collect();
    Contour::new(pts, ContourSpace::Plane)
}
