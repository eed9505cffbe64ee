//! B-spline bases, global curve interpolation, surface skinning and rational
//! surface evaluation.
//!
//! Basis evaluation follows the Cox–de Boor recursion in its triangular
//! (non-recursive) form. Interpolation solves the collocation system
//! `N · P = Q` directly with partial pivoting.

mod curve;
mod linalg;
mod surface;

use serde::{Deserialize, Serialize};

pub use curve::{interpolate_curve, CurveKind, NurbsCurve, Parameterization};
pub use linalg::solve;
pub use surface::{skin_surface, NurbsSurface, SkinInfo, SurfaceJson};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotStyle {
    Clamped,
    Periodic,
}

/// Nondecreasing knot sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
    style: KnotStyle,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, style: KnotStyle) -> Result<Self> {
        if knots.windows(2).any(|w| !(w[1] >= w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Invalid("knot vector must be finite and nondecreasing".into()));
        }
        Ok(Self { knots, style })
    }

    /// Clamped knots with uniformly spaced interior knots on [0, 1].
    pub fn clamped_uniform(n_ctrl: usize, degree: usize) -> Self {
        let spans = n_ctrl - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|i| i as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { knots, style: KnotStyle::Clamped }
    }

    /// Clamped knots from interpolation parameters by averaging `degree`
    /// consecutive parameters; one control point per parameter.
    pub fn clamped_averaged(params: &[f64], degree: usize) -> Self {
        let n = params.len() - 1;
        let mut knots = vec![0.0; degree + 1];
        for j in 1..=n.saturating_sub(degree) {
            knots.push(params[j..j + degree].iter().sum::<f64>() / degree as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { knots, style: KnotStyle::Clamped }
    }

    /// Clamped knots whose interior knots are the interior parameters
    /// themselves; pairs with two end-derivative conditions for cubics.
    pub fn clamped_at_params(params: &[f64], degree: usize) -> Self {
        let mut knots = vec![0.0; degree + 1];
        knots.extend_from_slice(&params[1..params.len() - 1]);
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { knots, style: KnotStyle::Clamped }
    }

    /// Uniform periodic knots for `distinct` control points (`distinct + degree`
    /// after wrapping); the domain is [0, 1].
    pub fn periodic_uniform(distinct: usize, degree: usize) -> Self {
        let knots = (0..=distinct + 2 * degree)
            .map(|i| (i as f64 - degree as f64) / distinct as f64)
            .collect();
        Self { knots, style: KnotStyle::Periodic }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn style(&self) -> KnotStyle {
        self.style
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn domain(&self, degree: usize) -> (f64, f64) {
        (self.knots[degree], self.knots[self.knots.len() - degree - 1])
    }

    pub fn is_valid_for(&self, degree: usize) -> bool {
        match self.style {
            KnotStyle::Clamped => {
                let n = self.knots.len();
                n >= 2 * (degree + 1)
                    && self.knots[..=degree].iter().all(|&k| k == self.knots[0])
                    && self.knots[n - degree - 1..].iter().all(|&k| k == self.knots[n - 1])
            }
            KnotStyle::Periodic => {
                let k = &self.knots;
                let n = k.len();
                n >= 2 * degree + 2
                    && (0..degree).all(|i| {
                        let lead = k[i + 1] - k[i];
                        let wrap = k[n - degree - 1 + i + 1] - k[n - degree - 1 + i];
                        let inner_lead = k[n - 2 * degree - 1 + i + 1] - k[n - 2 * degree - 1 + i];
                        let inner_tail = k[degree + i + 1] - k[degree + i];
                        (lead - inner_lead).abs() < 1e-12 && (wrap - inner_tail).abs() < 1e-12
                    })
            }
        }
    }
}

impl std::ops::Index<usize> for KnotVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.knots[i]
    }
}

/// Index of the knot span containing `u`; the last span is closed on the right.
pub fn find_span(knots: &KnotVector, degree: usize, u: f64) -> usize {
    let k = knots.knots();
    let n = k.len() - degree - 2;
    if u >= k[n + 1] {
        return n;
    }
    if u <= k[degree] {
        return degree;
    }
    let (mut low, mut high) = (degree, n + 1);
    let mut mid = (low + high) / 2;
    while u < k[mid] || u >= k[mid + 1] {
        if u < k[mid] {
            high = mid;
        } else {
            low = mid;
        }
        mid = (low + high) / 2;
    }
    mid
}

/// The `degree + 1` nonzero basis values `N_{span-degree..=span}(u)`.
pub fn basis_funs(knots: &KnotVector, degree: usize, span: usize, u: f64) -> Vec<f64> {
    let k = knots.knots();
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - k[span + 1 - j];
        right[j] = k[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Basis values and first derivatives at `u`, `[values, derivatives]`.
pub fn basis_funs_d1(knots: &KnotVector, degree: usize, span: usize, u: f64) -> [Vec<f64>; 2] {
    let k = knots.knots();
    let p = degree;
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - k[span + 1 - j];
        right[j] = k[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let values: Vec<f64> = (0..=p).map(|j| ndu[j][p]).collect();
    let mut d1 = vec![0.0; p + 1];
    if p > 0 {
        // N'_{i,p} = p * (N_{i,p-1} / (u_{i+p} - u_i) - N_{i+1,p-1} / (u_{i+p+1} - u_{i+1}))
        for (r, d) in d1.iter_mut().enumerate() {
            let mut acc = 0.0;
            if r >= 1 {
                acc += ndu[r - 1][p - 1] / ndu[p][r - 1];
            }
            if r < p {
                acc -= ndu[r][p - 1] / ndu[p][r];
            }
            *d = acc * p as f64;
        }
    }
    [values, d1]
}

/// A knot span index with its nonzero basis values.
pub type SpanBasis = (usize, Vec<f64>);

/// Checked basis evaluation.
pub fn basis(knots: &KnotVector, degree: usize, u: f64) -> Result<SpanBasis> {
    let (lo, hi) = knots.domain(degree);
    if !(u >= lo - 1e-12 && u <= hi + 1e-12) {
        return Err(Error::OutsideDomain(u, lo, hi));
    }
    let u = u.clamp(lo, hi);
    let span = find_span(knots, degree, u);
    Ok((span, basis_funs(knots, degree, span, u)))
}
