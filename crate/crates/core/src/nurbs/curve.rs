use serde::{Deserialize, Serialize};

use super::linalg::solve_checked;
use super::{basis_funs, basis_funs_d1, find_span, KnotStyle, KnotVector};
use crate::{Error, Result, Vec3};

/// Tolerance on `‖N·P − Q‖∞` relative to the data magnitude.
pub(crate) const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    Chord,
    #[default]
    Centripetal,
}

/// End handling of an interpolating curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Clamped, knots by parameter averaging, one control point per data point.
    #[default]
    Clamped,
    /// Clamped cubic with knots at the parameters and two estimated end
    /// tangents, giving two extra control points.
    ClampedEndTangents,
    /// Closed curve, uniform parameters and wrapped control points.
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NurbsCurve {
    degree: usize,
    knots: KnotVector,
    control: Vec<Vec3>,
    weights: Vec<f64>,
}

impl NurbsCurve {
    pub fn new(degree: usize, knots: KnotVector, control: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if control.len() != weights.len() || knots.len() != control.len() + degree + 1 {
            return Err(Error::Invalid(format!(
                "curve has {} control points, {} weights and {} knots for degree {degree}",
                control.len(),
                weights.len(),
                knots.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Invalid("curve weights must be positive".into()));
        }
        Ok(Self { degree, knots, control, weights })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Control points without the wrapped copies of a periodic curve.
    pub fn distinct_control_points(&self) -> &[Vec3] {
        match self.knots.style() {
            KnotStyle::Clamped => &self.control,
            KnotStyle::Periodic => &self.control[..self.control.len() - self.degree],
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        self.knots.domain(self.degree)
    }

    /// Rational evaluation; periodic curves wrap `u` into their domain.
    pub fn eval(&self, u: f64) -> Vec3 {
        let (lo, hi) = self.domain();
        let u = match self.knots.style() {
            KnotStyle::Periodic => lo + (u - lo).rem_euclid(hi - lo),
            KnotStyle::Clamped => u.clamp(lo, hi),
        };
        let span = find_span(&self.knots, self.degree, u);
        let n = basis_funs(&self.knots, self.degree, span, u);
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for (r, &nv) in n.iter().enumerate() {
            let i = span - self.degree + r;
            num += self.control[i] * (nv * self.weights[i]);
            den += nv * self.weights[i];
        }
        num / den
    }
}

/// Data parameters on [0, 1] from cumulative (optionally square-rooted) chords.
pub fn chord_params(points: &[Vec3], param: Parameterization) -> Result<Vec<f64>> {
    let d: Vec<f64> = points
        .windows(2)
        .map(|w| {
            let c = (w[1] - w[0]).norm();
            match param {
                Parameterization::Chord => c,
                Parameterization::Centripetal => c.sqrt(),
            }
        })
        .collect();
    let total: f64 = d.iter().sum();
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Singular(0.0));
    }
    let mut u = Vec::with_capacity(points.len());
    u.push(0.0);
    let mut acc = 0.0;
    for x in &d[..d.len() - 1] {
        acc += x;
        u.push(acc / total);
    }
    u.push(1.0);
    Ok(u)
}

/// Global interpolation through `points`; returns the curve and the
/// parameter at which it passes through each point. All weights are 1.
pub fn interpolate_curve(
    points: &[Vec3],
    degree: usize,
    param: Parameterization,
    kind: CurveKind,
) -> Result<(NurbsCurve, Vec<f64>)> {
    if degree == 0 || points.len() < degree + 1 {
        return Err(Error::Invalid(format!(
            "interpolation of degree {degree} needs at least {} points, got {}",
            degree + 1,
            points.len()
        )));
    }
    match kind {
        CurveKind::Periodic => interpolate_periodic(points, degree),
        CurveKind::Clamped => {
            let params = chord_params(points, param)?;
            let knots = KnotVector::clamped_averaged(&params, degree);
            let curve = interpolate_open(points, degree, &params, knots, None)?;
            Ok((curve, params))
        }
        CurveKind::ClampedEndTangents => {
            let params = chord_params(points, param)?;
            interpolate_end_tangents(points, degree, &params).map(|c| (c, params))
        }
    }
}

pub(crate) fn interpolate_end_tangents(points: &[Vec3], degree: usize, params: &[f64]) -> Result<NurbsCurve> {
    if degree != 3 || points.len() < 3 {
        return Err(Error::Invalid("end-tangent interpolation needs a cubic and at least 3 points".into()));
    }
    let knots = KnotVector::clamped_at_params(params, degree);
    let ends = bessel_end_tangents(points, params);
    interpolate_open(points, degree, params, knots, Some(ends))
}

/// Derivatives of the parabolas through the first and last three points.
pub(crate) fn bessel_end_tangents(q: &[Vec3], u: &[f64]) -> (Vec3, Vec3) {
    let n = q.len() - 1;
    let (d1, d2) = (u[1] - u[0], u[2] - u[1]);
    let (s1, s2) = ((q[1] - q[0]) / d1, (q[2] - q[1]) / d2);
    let start = s1 + (s1 - s2) * (d1 / (d1 + d2));
    let (e1, e2) = (u[n] - u[n - 1], u[n - 1] - u[n - 2]);
    let (t1, t2) = ((q[n] - q[n - 1]) / e1, (q[n - 1] - q[n - 2]) / e2);
    let end = t1 + (t1 - t2) * (e1 / (e1 + e2));
    (start, end)
}

/// Clamped interpolation with given parameters and knots. With end tangents
/// the system gains derivative rows after the first and before the last point.
pub(crate) fn interpolate_open(
    points: &[Vec3],
    degree: usize,
    params: &[f64],
    knots: KnotVector,
    ends: Option<(Vec3, Vec3)>,
) -> Result<NurbsCurve> {
    let n_ctrl = knots.len() - degree - 1;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_ctrl);
    let mut rhs: Vec<Vec3> = Vec::with_capacity(n_ctrl);
    let mut push_row = |u: f64, deriv: bool, q: Vec3| {
        let span = find_span(&knots, degree, u);
        let [vals, d1] = basis_funs_d1(&knots, degree, span, u);
        let src = if deriv { d1 } else { vals };
        let mut row = vec![0.0; n_ctrl];
        for (r, v) in src.into_iter().enumerate() {
            row[span - degree + r] = v;
        }
        rows.push(row);
        rhs.push(q);
    };
    let last = points.len() - 1;
    for (k, (&u, &q)) in params.iter().zip(points).enumerate() {
        if let (Some((_, end)), true) = (ends, k == last) {
            push_row(1.0, true, end);
        }
        push_row(u, false, q);
        if let (Some((start, _)), 0) = (ends, k) {
            push_row(0.0, true, start);
        }
    }
    if rows.len() != n_ctrl {
        return Err(Error::Invalid(format!("{} conditions for {n_ctrl} control points", rows.len())));
    }
    let control = solve_checked(&rows, &rhs, RESIDUAL_TOL)?;
    NurbsCurve::new(degree, knots, control, vec![1.0; n_ctrl])
}

/// Uniform data parameters of a periodic interpolant with `m` points. Even
/// degrees sample mid-span, where the collocation matrix stays invertible.
pub(crate) fn periodic_params(m: usize, degree: usize) -> Vec<f64> {
    let shift = if degree.is_multiple_of(2) { 0.5 / m as f64 } else { 0.0 };
    (0..m).map(|k| k as f64 / m as f64 + shift).collect()
}

fn interpolate_periodic(points: &[Vec3], degree: usize) -> Result<(NurbsCurve, Vec<f64>)> {
    let m = points.len();
    let knots = KnotVector::periodic_uniform(m, degree);
    let params = periodic_params(m, degree);
    let mut rows = vec![vec![0.0; m]; m];
    for (k, &u) in params.iter().enumerate() {
        let span = find_span(&knots, degree, u);
        let n = basis_funs(&knots, degree, span, u);
        for (r, v) in n.into_iter().enumerate() {
            rows[k][(span - degree + r) % m] += v;
        }
    }
    let distinct = solve_checked(&rows, points, RESIDUAL_TOL)?;
    let mut control = distinct.clone();
    control.extend_from_slice(&distinct[..degree]);
    let weights = vec![1.0; control.len()];
    Ok((NurbsCurve::new(degree, knots, control, weights)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(m: usize, r: f64) -> Vec<Vec3> {
        (0..m)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / m as f64;
                Vec3::new(r * a.cos(), r * a.sin(), 0.0)
            })
            .collect()
    }

    fn wavy() -> Vec<Vec3> {
        (0..9).map(|i| Vec3::new(i as f64, (i as f64 * 0.7).sin() * 2.0, (i as f64).powi(2) * 0.1)).collect()
    }

    #[test]
    fn passes_through_points_all_kinds() {
        let pts = wavy();
        for kind in [CurveKind::Clamped, CurveKind::ClampedEndTangents] {
            for param in [Parameterization::Chord, Parameterization::Centripetal] {
                let (c, u) = interpolate_curve(&pts, 3, param, kind).unwrap();
                for (q, &uk) in pts.iter().zip(&u) {
                    assert!((c.eval(uk) - q).norm() < 1e-8, "{kind:?} {param:?}");
                }
            }
        }
        let (c, u) = interpolate_curve(&circle(11, 3.0), 3, Parameterization::default(), CurveKind::Periodic).unwrap();
        for (q, &uk) in circle(11, 3.0).iter().zip(&u) {
            assert!((c.eval(uk) - q).norm() < 1e-8);
        }
    }

    #[test]
    fn control_counts() {
        let pts = wavy();
        let (c, _) = interpolate_curve(&pts, 3, Parameterization::Centripetal, CurveKind::Clamped).unwrap();
        assert_eq!(c.control_points().len(), 9);
        let (c, _) = interpolate_curve(&pts, 3, Parameterization::Centripetal, CurveKind::ClampedEndTangents).unwrap();
        assert_eq!(c.control_points().len(), 11);
        let (c, _) = interpolate_curve(&circle(8, 1.0), 3, Parameterization::Centripetal, CurveKind::Periodic).unwrap();
        assert_eq!(c.control_points().len(), 11);
        assert_eq!(c.distinct_control_points().len(), 8);
        assert!(c.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn collinear_points_give_the_segment() {
        let a = Vec3::new(1.0, -2.0, 0.5);
        let d = Vec3::new(0.3, 0.4, -1.2).normalize();
        let pts: Vec<Vec3> = [0.0, 0.7, 1.1, 2.9, 3.0, 4.6].iter().map(|&s| a + d * s).collect();
        for kind in [CurveKind::Clamped, CurveKind::ClampedEndTangents] {
            let (c, _) = interpolate_curve(&pts, 3, Parameterization::Centripetal, kind).unwrap();
            for p in c.control_points() {
                let v = p - a;
                assert!((v - d * v.dot(&d)).norm() < 1e-9);
            }
            for i in 0..=200 {
                let v = c.eval(i as f64 / 200.0) - a;
                let s = v.dot(&d);
                assert!((v - d * s).norm() < 1e-9);
                assert!((-1e-9..=4.6 + 1e-9).contains(&s));
            }
        }
    }

    #[test]
    fn eight_point_circle_radial_error() {
        let r = 10.0;
        let (c, _) = interpolate_curve(&circle(8, r), 3, Parameterization::Centripetal, CurveKind::Periodic).unwrap();
        let worst = (0..4000)
            .map(|i| (c.eval(i as f64 / 4000.0).norm() - r).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.002 * r, "radial error {worst}");
    }

    #[test]
    fn quadratic_periodic_is_solvable() {
        let (c, u) = interpolate_curve(&circle(8, 1.0), 2, Parameterization::Centripetal, CurveKind::Periodic).unwrap();
        for (q, &uk) in circle(8, 1.0).iter().zip(&u) {
            assert!((c.eval(uk) - q).norm() < 1e-9);
        }
    }

    #[test]
    fn coincident_points_are_singular() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            interpolate_curve(&pts, 3, Parameterization::Chord, CurveKind::Clamped),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn too_few_points() {
        assert!(interpolate_curve(&[Vec3::zeros(), Vec3::x()], 3, Parameterization::Chord, CurveKind::Clamped).is_err());
    }
}
