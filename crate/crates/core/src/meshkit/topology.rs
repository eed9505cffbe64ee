use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use super::TriMesh;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyReport {
    pub watertight: bool,
    pub manifold: bool,
    pub consistent_orientation: bool,
    pub boundary_edge_count: usize,
    pub boundary_loop_count: usize,
    /// Edge count of each boundary component.
    pub boundary_loop_lengths: Vec<usize>,
    pub non_manifold_edge_count: usize,
    pub euler_characteristic: i64,
    pub self_intersection_count: usize,
    pub vertex_count: usize,
    pub triangle_count: usize,
}

pub(super) fn validate(m: &TriMesh) -> TopologyReport {
    // undirected edge -> (uses, uses in the a<b direction)
    let mut edges: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for t in m.triangles() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = edges.entry((a.min(b), a.max(b))).or_default();
            e.0 += 1;
            if a < b {
                e.1 += 1;
            }
        }
    }
    let mut boundary = Vec::new();
    let (mut non_manifold, mut flipped) = (0, 0);
    for (&e, &(uses, forward)) in &edges {
        match uses {
            1 => boundary.push(e),
            2 if forward != 1 => flipped += 1,
            2 => {}
            _ => non_manifold += 1,
        }
    }
    let boundary_loop_lengths = boundary_components(&boundary);
    let mut used: Vec<usize> = m.triangles().iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let euler = used.len() as i64 - edges.len() as i64 + m.triangles().len() as i64;
    let manifold = non_manifold == 0;
    let consistent_orientation = flipped == 0;
    TopologyReport {
        watertight: !m.is_empty() && boundary.is_empty() && manifold && consistent_orientation,
        manifold,
        consistent_orientation,
        boundary_edge_count: boundary.len(),
        boundary_loop_count: boundary_loop_lengths.len(),
        boundary_loop_lengths,
        non_manifold_edge_count: non_manifold,
        euler_characteristic: euler,
        self_intersection_count: self_intersections(m),
        vertex_count: used.len(),
        triangle_count: m.triangles().len(),
    }
}

/// Connected components of the boundary-edge graph, as edge counts.
fn boundary_components(edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: HashMap<usize, usize> = HashMap::new();
    fn find(p: &mut HashMap<usize, usize>, x: usize) -> usize {
        let mut r = x;
        while let Some(&q) = p.get(&r).filter(|&&q| q != r) {
            r = q;
        }
        let mut c = x;
        while c != r {
            let next = p[&c];
            p.insert(c, r);
            c = next;
        }
        r
    }
    for &(a, b) in edges {
        parent.entry(a).or_insert(a);
        parent.entry(b).or_insert(b);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent.insert(ra.max(rb), ra.min(rb));
        }
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, _) in edges {
        *counts.entry(find(&mut parent, a)).or_default() += 1;
    }
    counts.into_values().collect()
}

/// Pairs of triangles without a shared vertex that intersect, found through a
/// uniform grid over triangle bounding boxes.
fn self_intersections(m: &TriMesh) -> usize {
    let n = m.triangles().len();
    if n < 2 {
        return 0;
    }
    let boxes: Vec<(Vec3, Vec3)> = (0..n)
        .map(|t| {
            let [a, b, c] = m.corners(t);
            (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
        })
        .collect();
    let cell = boxes.iter().map(|(lo, hi)| (hi - lo).max()).sum::<f64>() / n as f64 * 2.0;
    let cell = if cell > 0.0 { cell } else { 1.0 };
    let key = |p: &Vec3| [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64];
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (t, (lo, hi)) in boxes.iter().enumerate() {
        let (k0, k1) = (key(lo), key(hi));
        for x in k0[0]..=k1[0] {
            for y in k0[1]..=k1[1] {
                for z in k0[2]..=k1[2] {
                    grid.entry([x, y, z]).or_default().push(t);
                }
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = grid
        .values()
        .flat_map(|bucket| {
            bucket.iter().enumerate().flat_map(move |(i, &a)| bucket[i + 1..].iter().map(move |&b| (a.min(b), a.max(b))))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
        .par_iter()
        .filter(|&&(a, b)| {
            let (ta, tb) = (m.triangles()[a], m.triangles()[b]);
            if ta.iter().any(|i| tb.contains(i)) {
                return false;
            }
            let ((la, ha), (lb, hb)) = (boxes[a], boxes[b]);
            if (0..3).any(|k| ha[k] < lb[k] || hb[k] < la[k]) {
                return false;
            }
            triangles_intersect(&m.corners(a), &m.corners(b))
        })
        .count()
}

fn triangles_intersect(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    segments_hit_triangle(a, b) || segments_hit_triangle(b, a)
}

/// Whether any edge of `a` crosses triangle `b` (coplanar contact excluded).
pub fn segments_hit_triangle(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    (0..3).any(|k| {
        let (p, q) = (a[k], a[(k + 1) % 3]);
        segment_triangle(&p, &q, b)
    })
}

fn segment_triangle(p: &Vec3, q: &Vec3, t: &[Vec3; 3]) -> bool {
    let dir = q - p;
    let (e1, e2) = (t[1] - t[0], t[2] - t[0]);
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return false;
    }
    let inv = 1.0 / det;
    let s = p - t[0];
    let u = s.dot(&h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = s.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let r = e2.dot(&qv) * inv;
    (0.0..=1.0).contains(&r)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::cube;
    use super::*;

    #[test]
    fn closed_cube() {
        let r = cube(Vec3::zeros()).validate();
        assert!(r.watertight && r.manifold && r.consistent_orientation);
        assert_eq!(r.euler_characteristic, 2);
        assert_eq!(r.boundary_loop_count, 0);
        assert_eq!(r.self_intersection_count, 0);
    }

    #[test]
    fn cube_missing_a_triangle() {
        let c = cube(Vec3::zeros());
        let m = TriMesh::new(c.vertices().to_vec(), c.triangles()[1..].to_vec()).unwrap();
        let r = m.validate();
        assert!(!r.watertight);
        assert_eq!(r.boundary_loop_count, 1);
        assert_eq!(r.boundary_loop_lengths, vec![3]);
    }

    #[test]
    fn cubes_sharing_an_edge() {
        // second cube shares the edge x=1, y=1 (z in [0,1]) with the first
        let a = cube(Vec3::zeros());
        let b = cube(Vec3::new(1.0, 1.0, 0.0));
        let u = a.union(&b);
        // weld the shared positions
        let mut index: Vec<usize> = (0..u.vertices().len()).collect();
        for i in 0..u.vertices().len() {
            for j in 0..i {
                if u.vertices()[i] == u.vertices()[j] {
                    index[i] = index[j];
                    break;
                }
            }
        }
        let t = u.triangles().iter().map(|t| t.map(|i| index[i])).collect();
        let welded = TriMesh::new(u.vertices().to_vec(), t).unwrap();
        let r = welded.validate();
        assert!(r.non_manifold_edge_count >= 1);
        assert!(!r.watertight);
        assert_eq!(r, welded.validate());
    }

    #[test]
    fn inconsistent_orientation() {
        let c = cube(Vec3::zeros());
        let mut t = c.triangles().to_vec();
        t[0] = [t[0][0], t[0][2], t[0][1]];
        let r = TriMesh::new(c.vertices().to_vec(), t).unwrap().validate();
        assert!(!r.consistent_orientation && !r.watertight);
    }

    #[test]
    fn crossing_triangles_detected() {
        let c = cube(Vec3::zeros());
        let mut v = c.vertices().to_vec();
        let base = v.len();
        v.extend([Vec3::new(0.5, 0.5, -1.0), Vec3::new(0.5, 0.5, 2.0), Vec3::new(0.6, 0.9, 0.5)]);
        let mut t = c.triangles().to_vec();
        t.push([base, base + 1, base + 2]);
        let r = TriMesh::new(v, t).unwrap().validate();
        assert!(r.self_intersection_count >= 2);
    }
}
