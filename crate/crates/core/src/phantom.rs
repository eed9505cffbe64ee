//! Synthetic vessel volumes with analytic centerlines, radius profiles and
//! reference surfaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centerline::{rotation_minimizing_frames, CenterlinePolyline};
use crate::meshkit::{tube_mesh, TriMesh};
use crate::{Error, Result, Vec3, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomShape {
    Straight,
    Arc,
    Helix,
    Aneurysm,
    Coarctation,
    Branched,
}

impl PhantomShape {
    pub const ALL: [PhantomShape; 6] = [
        PhantomShape::Straight,
        PhantomShape::Arc,
        PhantomShape::Helix,
        PhantomShape::Aneurysm,
        PhantomShape::Coarctation,
        PhantomShape::Branched,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhantomShape::Straight => "straight",
            PhantomShape::Arc => "arc",
            PhantomShape::Helix => "helix",
            PhantomShape::Aneurysm => "aneurysm",
            PhantomShape::Coarctation => "coarctation",
            PhantomShape::Branched => "branched",
        }
    }
}

impl std::str::FromStr for PhantomShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhantomShape::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown phantom shape {s:?}")))
    }
}

/// Phantom description. Lengths are millimetres; `curvature` and `torsion`
/// are in 1/mm (arc uses curvature only, helix both).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: PhantomShape,
    pub length: f64,
    pub base_radius: f64,
    #[serde(default)]
    pub curvature: f64,
    #[serde(default)]
    pub torsion: f64,
    /// Radius change at the bump center, signed (negative narrows).
    #[serde(default)]
    pub bump_amplitude: f64,
    /// Gaussian sigma of the bump along the centerline.
    #[serde(default = "default_bump_width")]
    pub bump_width: f64,
    /// Ramp width of the lumen wall; one voxel spacing when absent.
    #[serde(default)]
    pub wall_softness: Option<f64>,
    #[serde(default)]
    pub branch: Option<BranchSpec>,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bump_width() -> f64 {
    5.0
}

/// Side tube leaving the main centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    /// Angle between the branch and the main tangent, degrees.
    pub angle_deg: f64,
    pub radius: f64,
    pub length: f64,
    /// Fraction of the main length where the branch starts.
    pub position: f64,
}

type RadiusFn<'a> = Box<dyn Fn(f64) -> f64 + Sync + 'a>;

impl PhantomSpec {
    /// Defaults for each shape: 64³ voxels at 0.8 mm.
    pub fn preset(shape: PhantomShape) -> PhantomSpec {
        let base = PhantomSpec {
            shape,
            length: 36.0,
            base_radius: 5.0,
            curvature: 0.0,
            torsion: 0.0,
            bump_amplitude: 0.0,
            bump_width: default_bump_width(),
            wall_softness: None,
            branch: None,
            dims: [64; 3],
            spacing: [0.8; 3],
            noise_sigma: 0.0,
            seed: 0,
        };
        match shape {
            PhantomShape::Straight => base,
            PhantomShape::Arc => PhantomSpec { length: 40.0, curvature: 0.05, ..base },
            PhantomShape::Helix => PhantomSpec { length: 40.0, base_radius: 3.5, curvature: 0.1, torsion: 0.05, ..base },
            PhantomShape::Aneurysm => PhantomSpec { base_radius: 4.0, bump_amplitude: 2.0, ..base },
            PhantomShape::Coarctation => PhantomSpec { bump_amplitude: -1.5, ..base },
            PhantomShape::Branched => PhantomSpec {
                base_radius: 4.5,
                branch: Some(BranchSpec { angle_deg: 60.0, radius: 2.5, length: 20.0, position: 0.5 }),
                ..base
            },
        }
    }

    pub fn wall_softness(&self) -> f64 {
        self.wall_softness.unwrap_or(self.spacing[0])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("phantom spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PhantomSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.base_radius) || !positive(self.length) {
            return Err(Error::Invalid("length and base_radius must be positive".into()));
        }
        if !positive(self.wall_softness()) || !self.spacing.iter().all(|&s| positive(s)) {
            return Err(Error::Invalid("wall softness and spacing must be positive".into()));
        }
        if self.bump_amplitude <= -self.base_radius || !positive(self.bump_width) {
            return Err(Error::Invalid("bump would collapse the lumen".into()));
        }
        if self.dims.iter().any(|&d| d < 2) || self.noise_sigma < 0.0 {
            return Err(Error::Invalid("dims must be at least 2 and noise non-negative".into()));
        }
        match self.shape {
            PhantomShape::Arc if !positive(self.curvature) => {
                return Err(Error::Invalid("arc needs positive curvature".into()))
            }
            PhantomShape::Arc if self.curvature * self.length >= 2.0 * std::f64::consts::PI => {
                return Err(Error::Invalid("arc must span less than a full turn".into()))
            }
            PhantomShape::Helix if !positive(self.curvature) || !positive(self.torsion) => {
                return Err(Error::Invalid("helix needs positive curvature and torsion".into()))
            }
            PhantomShape::Branched => {
                let b = self.branch.as_ref().ok_or_else(|| Error::Invalid("branched phantom needs a branch".into()))?;
                if !positive(b.radius) || !positive(b.length) || !(0.0..=1.0).contains(&b.position) {
                    return Err(Error::Invalid("invalid branch parameters".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn main_curve(&self) -> Curve {
        match self.shape {
            PhantomShape::Arc => Curve::Arc { radius: 1.0 / self.curvature, length: self.length },
            PhantomShape::Helix => {
                let k2 = self.curvature.powi(2) + self.torsion.powi(2);
                Curve::Helix { a: self.curvature / k2, h: self.torsion / k2, length: self.length }
            }
            _ => Curve::Line { start: Vec3::zeros(), dir: Vec3::z(), length: self.length },
        }
    }

    fn branch_curve(&self) -> Option<Curve> {
        let b = self.branch.as_ref().filter(|_| self.shape == PhantomShape::Branched)?;
        let a = b.angle_deg.to_radians();
        let start = Vec3::new(0.0, 0.0, b.position * self.length);
        Some(Curve::Line { start, dir: Vec3::new(a.sin(), 0.0, a.cos()), length: b.length })
    }

    /// Lumen radius at arc length `s` along the main centerline.
    pub fn radius_at(&self, s: f64) -> f64 {
        match self.shape {
            PhantomShape::Aneurysm | PhantomShape::Coarctation => {
                let z = (s - 0.5 * self.length) / self.bump_width;
                self.base_radius + self.bump_amplitude * (-0.5 * z * z).exp()
            }
            _ => self.base_radius,
        }
    }

    fn tubes(&self) -> Vec<(Curve, RadiusFn<'_>)> {
        let mut out: Vec<(Curve, RadiusFn<'_>)> =
            vec![(self.main_curve(), Box::new(move |s| self.radius_at(s)))];
        if let (Some(c), Some(b)) = (self.branch_curve(), self.branch.as_ref()) {
            let r = b.radius;
            out.push((c, Box::new(move |_| r)));
        }
        out
    }

    /// Intensity `clamp01(1 − (d − r(s*))/w)` of the union of all tubes.
    pub fn intensity_at(&self, p: &Vec3) -> f64 {
        let w = self.wall_softness();
        self.tubes()
            .iter()
            .map(|(c, r)| {
                let s = c.closest(p);
                let d = (p - c.point(s)).norm();
                (1.0 - (d - r(s)) / w).clamp(0.0, 1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Voxel grid centered on the tube bounding box.
    pub fn grid_origin(&self) -> Result<[f64; 3]> {
        let (lo, hi) = self.tube_box();
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let extent = (self.dims[a] - 1) as f64 * self.spacing[a];
            let margin = 2.0 * self.wall_softness();
            if hi[a] - lo[a] + 2.0 * margin > extent {
                return Err(Error::PhantomBounds(format!(
                    "axis {a}: tube spans {:.3} mm plus margins but the volume covers {extent:.3} mm",
                    hi[a] - lo[a]
                )));
            }
            origin[a] = 0.5 * (lo[a] + hi[a]) - 0.5 * extent;
        }
        Ok(origin)
    }

    fn tube_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::MAX);
        let mut hi = Vec3::repeat(f64::MIN);
        for (c, r) in self.tubes() {
            for k in 0..=1024 {
                let s = c.length() * k as f64 / 1024.0;
                let p = c.point(s);
                let rr = r(s);
                lo = lo.inf(&(p - Vec3::repeat(rr)));
                hi = hi.sup(&(p + Vec3::repeat(rr)));
            }
        }
        (lo, hi)
    }

    pub fn rasterize(&self) -> Result<Volume> {
        self.validate()?;
        let origin = self.grid_origin()?;
        let [nx, ny, nz] = self.dims;
        let sp = self.spacing;
        let mut data: Vec<f64> = (0..nz)
            .into_par_iter()
            .flat_map_iter(|z| {
                let mut slab = Vec::with_capacity(nx * ny);
                for y in 0..ny {
                    for x in 0..nx {
                        let p = Vec3::new(
                            origin[0] + x as f64 * sp[0],
                            origin[1] + y as f64 * sp[1],
                            origin[2] + z as f64 * sp[2],
                        );
                        slab.push(self.intensity_at(&p));
                    }
                }
                slab
            })
            .collect();
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let normal = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
            for v in &mut data {
                *v += normal.sample(&mut rng);
            }
        }
        Volume::new(self.dims, sp, origin, data)
    }

    /// `k` points uniformly spaced in arc length on the main centerline.
    pub fn analytic_centerline(&self, k: usize) -> Result<CenterlinePolyline> {
        if k < 4 {
            return Err(Error::Invalid(format!("need at least 4 centerline points, got {k}")));
        }
        self.validate()?;
        CenterlinePolyline::new(uniform_points(&self.main_curve(), k))
    }

    /// Centerline of the side branch, starting at the junction.
    pub fn branch_centerline(&self, k: usize) -> Result<Option<CenterlinePolyline>> {
        if k < 4 {
            return Err(Error::Invalid(format!("need at least 4 centerline points, got {k}")));
        }
        self.branch_curve().map(|c| CenterlinePolyline::new(uniform_points(&c, k))).transpose()
    }

    /// Swept-circle reference surface of the main tube, `nu` stations by `nv`
    /// angles, using rotation-minimizing frames along the analytic tangent.
    pub fn analytic_surface(&self, nu: usize, nv: usize, caps: bool) -> Result<TriMesh> {
        self.validate()?;
        sweep(&self.main_curve(), |s| self.radius_at(s), nu, nv, caps)
    }

    /// Reference surface of the side branch, if any.
    pub fn branch_surface(&self, nu: usize, nv: usize, caps: bool) -> Result<Option<TriMesh>> {
        let r = self.branch.as_ref().map(|b| b.radius).unwrap_or(0.0);
        self.branch_curve().map(|c| sweep(&c, |_| r, nu, nv, caps)).transpose()
    }
}

fn uniform_points(c: &Curve, k: usize) -> Vec<Vec3> {
    (0..k).map(|i| c.point(c.length() * i as f64 / (k - 1) as f64)).collect()
}

fn sweep(c: &Curve, radius: impl Fn(f64) -> f64, nu: usize, nv: usize, caps: bool) -> Result<TriMesh> {
    if nu < 8 || nv < 8 {
        return Err(Error::Invalid(format!("surface grid must be at least 8x8, got {nu}x{nv}")));
    }
    let s: Vec<f64> = (0..nu).map(|i| c.length() * i as f64 / (nu - 1) as f64).collect();
    let points: Vec<Vec3> = s.iter().map(|&s| c.point(s)).collect();
    let tangents: Vec<Vec3> = s.iter().map(|&s| c.tangent(s)).collect();
    let frames = rotation_minimizing_frames(&points, &tangents);
    let rows: Vec<Vec<Vec3>> = frames
        .iter()
        .zip(&s)
        .map(|(f, &s)| {
            let r = radius(s);
            (0..nv)
                .map(|j| {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
                    f.anchor + (f.n * th.cos() + f.b * th.sin()) * r
                })
                .collect()
        })
        .collect();
    Ok(tube_mesh(&rows, caps))
}

/// Arc-length parameterized centerline curves.
#[derive(Debug, Clone, Copy)]
enum Curve {
    Line { start: Vec3, dir: Vec3, length: f64 },
    /// Circle of the given radius in the xz-plane, starting at the origin
    /// heading +z and bending toward +x.
    Arc { radius: f64, length: f64 },
    /// `(a cos θ, a sin θ, h θ)` with `θ = s / sqrt(a² + h²)`.
    Helix { a: f64, h: f64, length: f64 },
}

impl Curve {
    fn length(&self) -> f64 {
        match *self {
            Curve::Line { length, .. } | Curve::Arc { length, .. } | Curve::Helix { length, .. } => length,
        }
    }

    fn point(&self, s: f64) -> Vec3 {
        match *self {
            Curve::Line { start, dir, .. } => start + dir * s,
            Curve::Arc { radius, .. } => {
                let phi = s / radius;
                Vec3::new(radius * (1.0 - phi.cos()), 0.0, radius * phi.sin())
            }
            Curve::Helix { a, h, .. } => {
                let th = s / (a * a + h * h).sqrt();
                Vec3::new(a * th.cos(), a * th.sin(), h * th)
            }
        }
    }

    fn tangent(&self, s: f64) -> Vec3 {
        match *self {
            Curve::Line { dir, .. } => dir,
            Curve::Arc { radius, .. } => {
                let phi = s / radius;
                Vec3::new(phi.sin(), 0.0, phi.cos())
            }
            Curve::Helix { a, h, .. } => {
                let c = (a * a + h * h).sqrt();
                let th = s / c;
                Vec3::new(-a * th.sin(), a * th.cos(), h) / c
            }
        }
    }

    /// Arc length of the closest curve point to `p`.
    fn closest(&self, p: &Vec3) -> f64 {
        match *self {
            Curve::Line { start, dir, length } => (p - start).dot(&dir).clamp(0.0, length),
            Curve::Arc { radius, length } => {
                // angle measured around the center (radius, 0, 0) from the start
                let q = p - Vec3::new(radius, 0.0, 0.0);
                let phi = q.z.atan2(-q.x);
                let span = length / radius;
                if (0.0..=span).contains(&phi) {
                    radius * phi
                } else {
                    let d0 = (p - self.point(0.0)).norm_squared();
                    let d1 = (p - self.point(length)).norm_squared();
                    if d0 <= d1 { 0.0 } else { length }
                }
            }
            Curve::Helix { length, .. } => {
                let n = 256;
                let dist = |s: f64| (p - self.point(s)).norm_squared();
                let mut best = (0..=n)
                    .map(|k| length * k as f64 / n as f64)
                    .min_by(|a, b| dist(*a).total_cmp(&dist(*b)))
                    .expect("nonempty");
                // Newton on (c(s) - p) . c'(s) = 0, with |c'| = 1 and c'' known
                for _ in 0..20 {
                    let eps = 1e-4;
                    let g = (self.point(best) - p).dot(&self.tangent(best));
                    let dt = (self.tangent(best + eps) - self.tangent(best - eps)) / (2.0 * eps);
                    let hess = 1.0 + (self.point(best) - p).dot(&dt);
                    if hess <= 0.0 {
                        break;
                    }
                    let next = (best - g / hess).clamp(0.0, length);
                    if (next - best).abs() < 1e-12 {
                        best = next;
                        break;
                    }
                    best = next;
                }
                best
            }
        }
    }
}
