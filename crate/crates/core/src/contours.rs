//! Point correspondence between adjacent contours by exhaustive cyclic
//! re-indexing, plus the contour-stack JSON format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lumenseg::{Contour, ContourSpace};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub contour: Contour,
    /// Index in `next` that becomes index 0.
    pub shift: usize,
    pub cost: f64,
    pub candidates: usize,
}

/// Sum of squared distances between `prev_i` and `next_{(i + k) mod M}`.
pub fn shift_cost(prev: &Contour, next: &Contour, k: usize) -> f64 {
    let m = prev.len();
    let (a, b) = (prev.points(), next.points());
    (0..m).map(|i| (a[i] - b[(i + k) % m]).norm_squared()).sum()
}

/// Re-indexes `next` by the cyclic shift closest to `prev`; ties go to the
/// smallest shift.
pub fn align_adjacent(prev: &Contour, next: &Contour) -> Result<Alignment> {
    if prev.len() != next.len() {
        return Err(Error::CountMismatch(prev.len(), next.len()));
    }
    let m = prev.len();
    let (shift, cost) = (0..m)
        .map(|k| (k, shift_cost(prev, next, k)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    Ok(Alignment { contour: next.rotated(shift), shift, cost, candidates: m })
}

/// Aligns every station to its (already aligned) predecessor.
pub fn align_chain(contours: &[Contour]) -> Result<Vec<Contour>> {
    if contours.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 contours, got {}", contours.len())));
    }
    let mut out = vec![contours[0].clone()];
    for next in &contours[1..] {
        let a = align_adjacent(out.last().expect("nonempty"), next)?;
        out.push(a.contour);
    }
    Ok(out)
}

/// Mean distance between same-index points of consecutive stations.
pub fn mean_correspondence_distance(contours: &[Contour]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for w in contours.windows(2) {
        for (a, b) in w[0].points().iter().zip(w[1].points()) {
            total += (a - b).norm();
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { total / count as f64 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub space: ContourSpace,
    pub stations: Vec<Vec<[f64; 3]>>,
}

impl ContourSet {
    pub fn from_contours(contours: &[Contour]) -> Result<Self> {
        let space = contours.first().map(|c| c.space()).ok_or(Error::EmptySet)?;
        if contours.iter().any(|c| c.space() != space) {
            return Err(Error::Invalid("contours mix coordinate spaces".into()));
        }
        Ok(Self {
            space,
            stations: contours.iter().map(|c| c.points().iter().map(|p| [p.x, p.y, p.z]).collect()).collect(),
        })
    }

    pub fn contours(&self) -> Result<Vec<Contour>> {
        self.stations
            .iter()
            .map(|s| Contour::new(s.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(), self.space))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&crate::error::read_text(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(m: usize, r: f64, phase: f64, z: f64) -> Contour {
        Contour::new(
            (0..m)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / m as f64 - phase;
                    Vec3::new(r * a.cos(), r * a.sin(), z)
                })
                .collect(),
            ContourSpace::World,
        )
        .unwrap()
    }

    fn wobbly(m: usize, seed: f64) -> Contour {
        Contour::new(
            (0..m)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / m as f64;
                    let r = 4.0 + 0.7 * (3.0 * a + seed).sin() + 0.2 * (7.0 * a).cos();
                    Vec3::new(r * a.cos(), r * a.sin(), seed)
                })
                .collect(),
            ContourSpace::World,
        )
        .unwrap()
    }

    fn rotated_right(c: &Contour, k: usize) -> Contour {
        let mut p = c.points().to_vec();
        p.rotate_right(k);
        Contour::new(p, c.space()).unwrap()
    }

    #[test]
    fn recovers_known_shift() {
        let prev = wobbly(32, 0.0);
        let next = rotated_right(&prev, 5);
        let a = align_adjacent(&prev, &next).unwrap();
        assert_eq!(a.shift, 5);
        assert_eq!(a.cost, 0.0);
        assert_eq!(a.candidates, 32);
        assert_eq!(a.contour, prev);
    }

    #[test]
    fn circle_phase_offset() {
        let m = 32;
        for theta in [0.3, 1.1, 2.9, 5.5] {
            let prev = circle(m, 3.0, 0.0, 0.0);
            let next = circle(m, 3.0, theta, 1.0);
            let expected = (theta * m as f64 / (2.0 * PI)).round() as usize % m;
            assert_eq!(align_adjacent(&prev, &next).unwrap().shift, expected);
        }
    }

    #[test]
    fn mismatched_sizes() {
        assert!(matches!(
            align_adjacent(&circle(32, 1.0, 0.0, 0.0), &circle(16, 1.0, 0.0, 0.0)),
            Err(Error::CountMismatch(32, 16))
        ));
    }

    #[test]
    fn identical_chain_unchanged() {
        let c = wobbly(32, 0.4);
        let chain = vec![c.clone(); 5];
        assert_eq!(align_chain(&chain).unwrap(), chain);
    }

    #[test]
    fn chain_recovers_injected_shifts() {
        let truth: Vec<Contour> = (0..8).map(|s| wobbly(32, s as f64 * 0.1)).collect();
        let shifts = [0, 7, 30, 1, 16, 3, 22, 9];
        let shuffled: Vec<Contour> = truth.iter().zip(shifts).map(|(c, k)| rotated_right(c, k)).collect();
        let aligned = align_chain(&shuffled).unwrap();
        assert_eq!(aligned, truth);
        let cost = |cs: &[Contour]| cs.windows(2).map(|w| shift_cost(&w[0], &w[1], 0)).sum::<f64>();
        assert_eq!(cost(&aligned), cost(&truth));
    }

    #[test]
    fn json_round_trip() {
        let set = ContourSet::from_contours(&[wobbly(16, 0.0), wobbly(16, 1.0)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        set.write(&path).unwrap();
        assert_eq!(ContourSet::read(&path).unwrap(), set);
        assert_eq!(set.contours().unwrap()[1], wobbly(16, 1.0));
    }

    proptest! {
        #[test]
        fn alignment_is_optimal_and_preserves_geometry(seed in 0.0f64..6.0, k in 0usize..24, m in 8usize..40) {
            let prev = wobbly(m, seed);
            let next = rotated_right(&wobbly(m, seed + 0.05), k % m);
            let a = align_adjacent(&prev, &next).unwrap();
            for j in 0..m {
                let c = shift_cost(&prev, &next, j);
                prop_assert!(c > a.cost || (c == a.cost && j >= a.shift));
            }
            let mut before: Vec<_> = next.points().iter().map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())).collect();
            let mut after: Vec<_> = a.contour.points().iter().map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
            prop_assert!((a.contour.perimeter() - next.perimeter()).abs() < 1e-9);
            prop_assert!((a.contour.vector_area() - next.vector_area()).norm() < 1e-9);
        }
    }
}
