//! Centerline containers, B-spline smoothing, tangents and rotation-minimizing
//! local frames.

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::nurbs::{basis_funs, find_span, KnotVector};
use crate::volume::Bounds;
use crate::{fmt, Error, Result, Vec3};

/// Ordered centerline points in world millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlinePolyline {
    points: Vec<Vec3>,
}

impl CenterlinePolyline {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Invalid(format!("centerline needs at least 4 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("centerline"));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::Invalid(format!("centerline points {i} and {} coincide", i + 1)));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Unit tangents: forward difference at the start, central differences
    /// inside, and the last point reuses its predecessor's tangent.
    pub fn tangents(&self) -> Result<Vec<Vec3>> {
        let p = &self.points;
        let k = p.len();
        let mut out = Vec::with_capacity(k);
        for i in 0..k - 1 {
            let d = if i == 0 { p[1] - p[0] } else { p[i + 1] - p[i - 1] };
            let n = d.norm();
            if !(n > 1e-12) {
                return Err(Error::DegenerateTangent(i));
            }
            out.push(d / n);
        }
        out.push(out[k - 2]);
        Ok(out)
    }

    /// Rotation-minimizing frames along the polyline.
    pub fn frames(&self) -> Result<Vec<LocalFrame>> {
        let t = self.tangents()?;
        Ok(rotation_minimizing_frames(&self.points, &t))
    }

    /// Treats the points as control points of a clamped uniform cubic
    /// B-spline and returns `k_out` samples spaced uniformly in arc length.
    pub fn smooth_resample(&self, k_out: usize) -> Result<CenterlinePolyline> {
        if k_out < 4 {
            return Err(Error::Invalid(format!("k_out must be at least 4, got {k_out}")));
        }
        const DEGREE: usize = 3;
        const SEGMENTS_PER_SPAN: usize = 256;
        let knots = KnotVector::clamped_uniform(self.points.len(), DEGREE);
        let spans = self.points.len() - DEGREE;
        let n_samples = spans * SEGMENTS_PER_SPAN;
        let eval = |u: f64| -> Vec3 {
            let span = find_span(&knots, DEGREE, u);
            let n = basis_funs(&knots, DEGREE, span, u);
            (0..=DEGREE).fold(Vec3::zeros(), |acc, r| acc + self.points[span - DEGREE + r] * n[r])
        };
        let params: Vec<f64> = (0..=n_samples).map(|i| i as f64 / n_samples as f64).collect();
        let pts: Vec<Vec3> = params.iter().map(|&u| eval(u)).collect();
        let mut cumulative = vec![0.0; pts.len()];
        for i in 1..pts.len() {
            cumulative[i] = cumulative[i - 1] + (pts[i] - pts[i - 1]).norm();
        }
        let total = cumulative[n_samples];
        if !(total > 0.0) {
            return Err(Error::Invalid("centerline spline has zero length".into()));
        }
        let mut out = Vec::with_capacity(k_out);
        let mut seg = 0;
        for j in 0..k_out {
            let target = total * j as f64 / (k_out - 1) as f64;
            while seg + 1 < n_samples && cumulative[seg + 1] < target {
                seg += 1;
            }
            let len = cumulative[seg + 1] - cumulative[seg];
            let f = if len > 0.0 { ((target - cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
            out.push(eval(params[seg] + f * (params[seg + 1] - params[seg])));
        }
        CenterlinePolyline::new(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", fmt::sig(p.x, 9), fmt::sig(p.y, 9), fmt::sig(p.z, 9)));
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&crate::error::read_text(path)?)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('x') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("centerline line {}: {e}", line_no + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Parse(format!("centerline line {}: expected 3 fields", line_no + 1)));
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
        Self::new(points)
    }
}

/// Orthonormal frame at a centerline point. `rotation()` is `[b n t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub t: Vec3,
    pub n: Vec3,
    pub b: Vec3,
    pub anchor: Vec3,
}

impl LocalFrame {
    /// Frame from a tangent and a normal hint; `b = n x t` keeps `det R = +1`.
    pub fn from_tangent_normal(anchor: Vec3, t: Vec3, n_hint: Vec3) -> Self {
        let t = t.normalize();
        let n = (n_hint - t * n_hint.dot(&t)).normalize();
        let b = n.cross(&t);
        LocalFrame { t, n, b, anchor }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b, self.n, self.t])
    }

    /// Local plane coordinates `(along b, along n, along t)` to world.
    pub fn to_world(&self, l: &Vec3) -> Vec3 {
        self.b * l.x + self.n * l.y + self.t * l.z + self.anchor
    }

    /// World to local coordinates, `R^T (w - g)`.
    pub fn to_local(&self, w: &Vec3) -> Vec3 {
        let d = w - self.anchor;
        Vec3::new(d.dot(&self.b), d.dot(&self.n), d.dot(&self.t))
    }

    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        (r.transpose() * r - Matrix3::identity()).abs().max()
    }
}

/// Initial normal: rejection of the coordinate axis least aligned with `t`,
/// ties going to x, then y, then z.
pub fn initial_normal(t: &Vec3) -> Vec3 {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut best = 0;
    for a in 1..3 {
        if t[a].abs() < t[best].abs() {
            best = a;
        }
    }
    let e = axes[best];
    (e - t * e.dot(t)).normalize()
}

/// Double-reflection rotation-minimizing frames for points with given unit tangents.
pub fn rotation_minimizing_frames(points: &[Vec3], tangents: &[Vec3]) -> Vec<LocalFrame> {
    assert_eq!(points.len(), tangents.len());
    let mut frames = Vec::with_capacity(points.len());
    let mut r = initial_normal(&tangents[0]);
    frames.push(LocalFrame::from_tangent_normal(points[0], tangents[0], r));
    for i in 0..points.len() - 1 {
        let v1 = points[i + 1] - points[i];
        let c1 = v1.dot(&v1);
        let (r_l, t_l) = if c1 > 0.0 {
            (r - v1 * (2.0 / c1 * v1.dot(&r)), tangents[i] - v1 * (2.0 / c1 * v1.dot(&tangents[i])))
        } else {
            (r, tangents[i])
        };
        let v2 = tangents[i + 1] - t_l;
        let c2 = v2.dot(&v2);
        r = if c2 > 1e-30 { r_l - v2 * (2.0 / c2 * v2.dot(&r_l)) } else { r_l };
        let frame = LocalFrame::from_tangent_normal(points[i + 1], tangents[i + 1], r);
        r = frame.n;
        frames.push(frame);
    }
    frames
}

/// Centerline coordinates normalized to [-1, 1] per axis by a world box.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineImage {
    rows: Vec<[f64; 3]>,
}

impl CenterlineImage {
    pub fn encode(c: &CenterlinePolyline, bounds: &Bounds) -> Result<Self> {
        let rows: Vec<[f64; 3]> = c
            .points()
            .iter()
            .map(|p| {
                let mut r = [0.0; 3];
                for a in 0..3 {
                    r[a] = 2.0 * (p[a] - bounds.lo[a]) / (bounds.hi[a] - bounds.lo[a]) - 1.0;
                }
                r
            })
            .collect();
        if rows.iter().flatten().any(|v| !(-1.0 - 1e-12..=1.0 + 1e-12).contains(v)) {
            return Err(Error::Invalid("centerline leaves the volume bounds".into()));
        }
        Ok(Self { rows })
    }

    /// Wraps raw rows without the [-1, 1] check (diffusion states leave it).
    pub fn from_rows(rows: Vec<[f64; 3]>) -> Self {
        Self { rows }
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self { rows: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() }
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn decode_points(&self, bounds: &Bounds) -> Vec<Vec3> {
        self.rows.iter().map(|r| denormalize(r, bounds)).collect()
    }

    pub fn decode(&self, bounds: &Bounds) -> Result<CenterlinePolyline> {
        CenterlinePolyline::new(self.decode_points(bounds))
    }
}

pub fn denormalize(r: &[f64; 3], bounds: &Bounds) -> Vec3 {
    let mut p = Vec3::zeros();
    for a in 0..3 {
        p[a] = bounds.lo[a] + (r[a] + 1.0) * 0.5 * (bounds.hi[a] - bounds.lo[a]);
    }
    p
}
