use serde::{Deserialize, Serialize};

use super::curve::{
    bessel_end_tangents, chord_params, interpolate_curve, interpolate_open, CurveKind, Parameterization,
};
use super::{basis_funs, find_span, KnotStyle, KnotVector, SpanBasis};
use crate::meshkit::{tube_mesh, TriMesh};
use crate::{Contour, Error, Result, Vec3};

/// Tensor-product rational surface. Rows run along `u` (clamped, longitudinal),
/// columns along `v` (periodic, circumferential, last `degree_v` columns wrap).
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsSurface {
    degree_u: usize,
    degree_v: usize,
    knots_u: KnotVector,
    knots_v: KnotVector,
    control: Vec<Vec<Vec3>>,
    weights: Vec<Vec<f64>>,
}

/// Parameters at which a skinned surface reproduces its input contours.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinInfo {
    pub u_params: Vec<f64>,
    pub v_params: Vec<f64>,
}

impl NurbsSurface {
    pub fn new(
        degree_u: usize,
        degree_v: usize,
        knots_u: KnotVector,
        knots_v: KnotVector,
        control: Vec<Vec<Vec3>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let rows = knots_u.len().saturating_sub(degree_u + 1);
        let cols = knots_v.len().saturating_sub(degree_v + 1);
        if rows == 0 || cols == 0 || control.len() != rows || weights.len() != rows {
            return Err(Error::Invalid(format!("control net must have {rows} rows to match knots_u")));
        }
        if control.iter().any(|r| r.len() != cols) || weights.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid(format!("control net rows must have {cols} columns to match knots_v")));
        }
        if weights.iter().flatten().any(|&w| !(w > 0.0)) {
            return Err(Error::Invalid("surface weights must be positive".into()));
        }
        if knots_v.style() == KnotStyle::Periodic {
            for row in &control {
                for j in 0..degree_v {
                    if row[cols - degree_v + j] != row[j] {
                        return Err(Error::Invalid("periodic columns must replicate the first degree_v columns".into()));
                    }
                }
            }
        }
        Ok(Self { degree_u, degree_v, knots_u, knots_v, control, weights })
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.degree_u, self.degree_v)
    }

    pub fn knots_u(&self) -> &KnotVector {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &KnotVector {
        &self.knots_v
    }

    /// `(rows, cols)` of the control net including wrapped columns.
    pub fn net_dims(&self) -> (usize, usize) {
        (self.control.len(), self.control[0].len())
    }

    pub fn control_net(&self) -> &[Vec<Vec3>] {
        &self.control
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn domain_u(&self) -> (f64, f64) {
        self.knots_u.domain(self.degree_u)
    }

    pub fn domain_v(&self) -> (f64, f64) {
        self.knots_v.domain(self.degree_v)
    }

    fn wrap_v(&self, v: f64) -> f64 {
        let (lo, hi) = self.domain_v();
        match self.knots_v.style() {
            KnotStyle::Periodic => lo + (v - lo).rem_euclid(hi - lo),
            KnotStyle::Clamped => v.clamp(lo, hi),
        }
    }

    /// Basis spans and values at `(u, v)`.
    pub fn basis_at(&self, u: f64, v: f64) -> Result<(SpanBasis, SpanBasis)> {
        let (lo, hi) = self.domain_u();
        if !(u >= lo - 1e-12 && u <= hi + 1e-12) {
            return Err(Error::OutsideDomain(u, lo, hi));
        }
        let u = u.clamp(lo, hi);
        let v = self.wrap_v(v);
        let su = find_span(&self.knots_u, self.degree_u, u);
        let sv = find_span(&self.knots_v, self.degree_v, v);
        Ok((
            (su, basis_funs(&self.knots_u, self.degree_u, su, u)),
            (sv, basis_funs(&self.knots_v, self.degree_v, sv, v)),
        ))
    }

    /// `S(u, v) = Σ N_i(u) N_j(v) w_ij p_ij / Σ N_i(u) N_j(v) w_ij`.
    pub fn eval(&self, u: f64, v: f64) -> Result<Vec3> {
        let ((su, nu), (sv, nv)) = self.basis_at(u, v)?;
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for (a, &bu) in nu.iter().enumerate() {
            let i = su - self.degree_u + a;
            for (b, &bv) in nv.iter().enumerate() {
                let j = sv - self.degree_v + b;
                let w = bu * bv * self.weights[i][j];
                num += self.control[i][j] * w;
                den += w;
            }
        }
        Ok(num / den)
    }

    pub fn map_control(&self, f: impl Fn(&Vec3) -> Vec3) -> NurbsSurface {
        let control = self.control.iter().map(|r| r.iter().map(&f).collect()).collect();
        NurbsSurface { control, ..self.clone() }
    }

    pub fn with_weights(&self, weights: Vec<Vec<f64>>) -> Result<NurbsSurface> {
        NurbsSurface::new(
            self.degree_u,
            self.degree_v,
            self.knots_u.clone(),
            self.knots_v.clone(),
            self.control.clone(),
            weights,
        )
    }

    /// Triangle mesh on a uniform `nu × nv` grid, `v` wrapped, outward
    /// facing, optionally closed with triangle fans at `u = 0` and `u = 1`.
    pub fn tessellate(&self, nu: usize, nv: usize, caps: bool) -> Result<TriMesh> {
        if nu < 16 || nv < 16 {
            return Err(Error::Invalid(format!("tessellation needs nu, nv >= 16, got {nu} x {nv}")));
        }
        let (u0, u1) = self.domain_u();
        let (v0, v1) = self.domain_v();
        let rows = (0..nu)
            .map(|i| {
                let u = u0 + (u1 - u0) * i as f64 / (nu - 1) as f64;
                (0..nv).map(|j| self.eval(u, v0 + (v1 - v0) * j as f64 / nv as f64)).collect()
            })
            .collect::<Result<Vec<Vec<Vec3>>>>()?;
        Ok(tube_mesh(&rows, caps))
    }

    pub fn to_json(&self) -> SurfaceJson {
        SurfaceJson {
            degrees: [self.degree_u, self.degree_v],
            knots_u: self.knots_u.clone(),
            knots_v: self.knots_v.clone(),
            net_dims: [self.control.len(), self.control[0].len()],
            control_points: self.control.iter().flatten().map(|p| [p.x, p.y, p.z]).collect(),
            weights: self.weights.iter().flatten().copied().collect(),
        }
    }

    pub fn from_json(j: &SurfaceJson) -> Result<Self> {
        let [rows, cols] = j.net_dims;
        if j.control_points.len() != rows * cols || j.weights.len() != rows * cols {
            return Err(Error::Parse("net_dims disagree with control point or weight count".into()));
        }
        let control = j
            .control_points
            .chunks(cols)
            .map(|r| r.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
            .collect();
        let weights = j.weights.chunks(cols).map(|r| r.to_vec()).collect();
        NurbsSurface::new(j.degrees[0], j.degrees[1], j.knots_u.clone(), j.knots_v.clone(), control, weights)
    }
}

/// Serialized surface: row-major control points and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceJson {
    pub degrees: [usize; 2],
    pub knots_u: KnotVector,
    pub knots_v: KnotVector,
    pub net_dims: [usize; 2],
    pub control_points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Skins aligned closed contours: each contour is interpolated by a periodic
/// curve of degree `q`, then every column of those control points by a
/// clamped cubic with estimated end tangents (degree `p`; other degrees
/// fall back to knot averaging). `s` stations of `m` points give a net of
/// `(s + 2) × (m + q)` for cubics.
pub fn skin_surface(contours: &[Contour], p: usize, q: usize) -> Result<(NurbsSurface, SkinInfo)> {
    if contours.len() < 4 {
        return Err(Error::Invalid(format!("skinning needs at least 4 contours, got {}", contours.len())));
    }
    let m = contours[0].len();
    if m < 8 {
        return Err(Error::ContourTooShort(m));
    }
    if let Some(c) = contours.iter().find(|c| c.len() != m) {
        return Err(Error::CountMismatch(m, c.len()));
    }

    let mut sections = Vec::with_capacity(contours.len());
    let mut v_params = Vec::new();
    let mut knots_v = None;
    for c in contours {
        let (curve, params) = interpolate_curve(c.points(), q, Parameterization::Centripetal, CurveKind::Periodic)?;
        v_params = params;
        knots_v = Some(curve.knots().clone());
        sections.push(curve.distinct_control_points().to_vec());
    }
    let knots_v = knots_v.expect("at least four sections");

    // Shared longitudinal parameters: average of per-column centripetal parameters.
    let s = sections.len();
    let mut u_params = vec![0.0; s];
    for j in 0..m {
        let column: Vec<Vec3> = sections.iter().map(|sec| sec[j]).collect();
        for (acc, u) in u_params.iter_mut().zip(chord_params(&column, Parameterization::Centripetal)?) {
            *acc += u / m as f64;
        }
    }
    u_params[0] = 0.0;
    u_params[s - 1] = 1.0;

    let knots_u = if p == 3 {
        KnotVector::clamped_at_params(&u_params, p)
    } else {
        KnotVector::clamped_averaged(&u_params, p)
    };
    let rows = knots_u.len() - p - 1;
    let mut control = vec![Vec::with_capacity(m + q); rows];
    for j in 0..m {
        let column: Vec<Vec3> = sections.iter().map(|sec| sec[j]).collect();
        let ends = (p == 3).then(|| bessel_end_tangents(&column, &u_params));
        let curve = interpolate_open(&column, p, &u_params, knots_u.clone(), ends)?;
        for (row, cp) in control.iter_mut().zip(curve.control_points()) {
            row.push(*cp);
        }
    }
    for row in &mut control {
        for j in 0..q {
            let wrapped = row[j];
            row.push(wrapped);
        }
    }
    let weights = vec![vec![1.0; m + q]; rows];
    let surface = NurbsSurface::new(p, q, knots_u, knots_v, control, weights)?;
    Ok((surface, SkinInfo { u_params, v_params }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lumenseg::ContourSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ring(m: usize, r: f64, z: f64, phase: f64) -> Contour {
        Contour::new(
            (0..m)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / m as f64 + phase;
                    Vec3::new(r * a.cos(), r * a.sin(), z)
                })
                .collect(),
            ContourSpace::World,
        )
        .unwrap()
    }

    fn cylinder(stations: usize, m: usize, r: f64) -> Vec<Contour> {
        (0..stations).map(|i| ring(m, r, 2.5 * i as f64, 0.0)).collect()
    }

    fn wobbly(stations: usize, m: usize) -> Vec<Contour> {
        (0..stations)
            .map(|i| {
                let z = 3.0 * i as f64;
                let c = Vec3::new((z * 0.2).sin() * 2.0, 0.0, z);
                let r = 4.0 + 0.8 * (z * 0.3).cos();
                Contour::new(
                    (0..m)
                        .map(|k| {
                            let a = 2.0 * PI * k as f64 / m as f64;
                            c + Vec3::new(r * a.cos(), 1.1 * r * a.sin(), 0.0)
                        })
                        .collect(),
                    ContourSpace::World,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn net_dimensions() {
        let (s, _) = skin_surface(&cylinder(16, 32, 5.0), 3, 3).unwrap();
        assert_eq!(s.net_dims(), (16 + 2, 32 + 3));
        assert!(s.knots_u().is_valid_for(3));
        assert!(s.knots_v().is_valid_for(3));
    }

    #[test]
    fn reproduces_contour_points() {
        let contours = wobbly(9, 24);
        let (s, info) = skin_surface(&contours, 3, 3).unwrap();
        for (c, &u) in contours.iter().zip(&info.u_params) {
            for (pt, &v) in c.points().iter().zip(&info.v_params) {
                assert!((s.eval(u, v).unwrap() - pt).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn cylinder_radial_error() {
        let r = 5.0;
        let (s, _) = skin_surface(&cylinder(8, 32, r), 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let p = s.eval(rng.random(), rng.random()).unwrap();
            let radial = (p.x * p.x + p.y * p.y).sqrt();
            assert!((radial - r).abs() <= 0.002 * r);
        }
    }

    #[test]
    fn rational_partition_of_unity() {
        let (s, _) = skin_surface(&wobbly(6, 16), 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights: Vec<Vec<f64>> = s.weights().iter().map(|r| r.iter().map(|_| rng.random_range(0.5..2.0)).collect()).collect();
        // keep the periodic replicas consistent
        let weights: Vec<Vec<f64>> = weights
            .into_iter()
            .map(|mut r| {
                let n = r.len();
                for j in 0..3 {
                    r[n - 3 + j] = r[j];
                }
                r
            })
            .collect();
        for _ in 0..1000 {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let ((su, nu), (sv, nv)) = s.basis_at(u, v).unwrap();
            let den: f64 = (0..4)
                .flat_map(|a| (0..4).map(move |b| (a, b)))
                .map(|(a, b)| nu[a] * nv[b] * weights[su - 3 + a][sv - 3 + b])
                .sum();
            let total: f64 = (0..4)
                .flat_map(|a| (0..4).map(move |b| (a, b)))
                .map(|(a, b)| nu[a] * nv[b] * weights[su - 3 + a][sv - 3 + b] / den)
                .sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn unit_weights_match_nonrational_blend() {
        let (s, _) = skin_surface(&wobbly(6, 16), 3, 3).unwrap();
        let ((su, nu), (sv, nv)) = s.basis_at(0.37, 0.81).unwrap();
        let mut blend = Vec3::zeros();
        for (a, ba) in nu.iter().enumerate() {
            for (b, bb) in nv.iter().enumerate() {
                blend += s.control_net()[su - 3 + a][sv - 3 + b] * (ba * bb);
            }
        }
        assert!((s.eval(0.37, 0.81).unwrap() - blend).norm() <= 1e-12);
    }

    #[test]
    fn affine_and_weight_scaling_invariance() {
        let (s, _) = skin_surface(&wobbly(6, 16), 3, 3).unwrap();
        let d = Vec3::new(3.0, -1.5, 10.0);
        let moved = s.map_control(|p| p + d);
        let scaled = s.with_weights(s.weights().iter().map(|r| r.iter().map(|w| w * 10.0).collect()).collect()).unwrap();
        for i in 0..50 {
            let (u, v) = (i as f64 / 49.0, (i as f64 * 0.137).fract());
            let p = s.eval(u, v).unwrap();
            assert!((moved.eval(u, v).unwrap() - (p + d)).norm() <= 1e-12);
            assert!((scaled.eval(u, v).unwrap() - p).norm() <= 1e-12);
        }
    }

    #[test]
    fn local_support() {
        let (s, _) = skin_surface(&wobbly(8, 16), 3, 3).unwrap();
        let (i, j) = (4, 6);
        let mut control = s.control_net().to_vec();
        control[i][j] += Vec3::new(0.0, 0.0, 5.0);
        let bumped = NurbsSurface::new(3, 3, s.knots_u().clone(), s.knots_v().clone(), control, s.weights().to_vec()).unwrap();
        let ku = s.knots_u().knots();
        let kv = s.knots_v().knots();
        for a in 0..=60 {
            for b in 0..60 {
                let (u, v) = (a as f64 / 60.0, b as f64 / 60.0);
                let inside = u > ku[i] && u < ku[i + 4] && v > kv[j] && v < kv[j + 4];
                let changed = (bumped.eval(u, v).unwrap() - s.eval(u, v).unwrap()).norm() > 1e-12;
                if changed {
                    assert!(inside, "change outside footprint at ({u}, {v})");
                }
            }
        }
    }

    #[test]
    fn convex_hull_containment() {
        // control net of a circular cylinder lies outside the radius,
        // so every surface point must stay within the net's radial/z bounds
        let (s, _) = skin_surface(&cylinder(6, 16, 4.0), 3, 3).unwrap();
        let net: Vec<Vec3> = s.control_net().iter().flatten().copied().collect();
        let rmax = net.iter().map(|p| p.xy().norm()).fold(0.0, f64::max);
        let (zmin, zmax) = net.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.z), b.max(p.z)));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let p = s.eval(rng.random(), rng.random()).unwrap();
            assert!(p.xy().norm() <= rmax + 1e-12);
            assert!(p.z >= zmin - 1e-12 && p.z <= zmax + 1e-12);
        }
    }

    #[test]
    fn tessellation_topology() {
        let (s, _) = skin_surface(&cylinder(6, 32, 4.0), 3, 3).unwrap();
        let (nu, nv) = (20, 24);
        let closed = s.tessellate(nu, nv, true).unwrap();
        assert_eq!(closed.triangles().len(), 2 * (nu - 1) * nv + 2 * nv);
        let report = closed.validate();
        assert!(report.watertight);
        assert_eq!(report.euler_characteristic, 2);
        assert!(closed.signed_volume() > 0.0);
        let open = s.tessellate(nu, nv, false).unwrap().validate();
        assert_eq!(open.boundary_loop_count, 2);
        assert_eq!(open.boundary_loop_lengths, vec![nv, nv]);
        assert!(s.tessellate(8, 32, true).is_err());
    }

    #[test]
    fn json_round_trip() {
        let (s, _) = skin_surface(&wobbly(5, 12), 3, 3).unwrap();
        let text = serde_json::to_string(&s.to_json()).unwrap();
        let back = NurbsSurface::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_stacks() {
        assert!(skin_surface(&cylinder(3, 16, 1.0), 3, 3).is_err());
        let mut c = cylinder(5, 16, 1.0);
        c[2] = ring(12, 1.0, 5.0, 0.0);
        assert!(matches!(skin_surface(&c, 3, 3), Err(Error::CountMismatch(16, 12))));
    }
}
