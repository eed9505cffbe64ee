use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use super::{compact, TriMesh};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JunctionReport {
    pub removed_triangles: usize,
    pub bridge_triangles: usize,
    pub bridged_vertices: usize,
    pub max_bridge_length: f64,
    pub mean_bridge_length: f64,
}

/// Ray directions tried in turn; later ones replace a direction that grazes
/// an edge or vertex of the mesh.
const RAYS: [[f64; 3]; 4] = [
    [1.0, 0.0, 0.0],
    [0.577_350_269, 0.577_350_269, 0.577_350_269],
    [0.0, 0.813_733_471, 0.581_238_194],
    [0.267_261_242, -0.534_522_484, 0.801_783_726],
];

/// Ray-parity inside test against a closed mesh.
pub fn is_inside(mesh: &TriMesh, p: &Vec3) -> bool {
    for dir in RAYS {
        let d = Vec3::from(dir);
        let mut hits = 0usize;
        let mut grazing = false;
        for t in 0..mesh.triangles().len() {
            match ray_hit(p, &d, &mesh.corners(t)) {
                Hit::Miss => {}
                Hit::Clean => hits += 1,
                Hit::Grazing => {
                    grazing = true;
                    break;
                }
            }
        }
        if !grazing {
            return hits % 2 == 1;
        }
    }
    false
}

enum Hit {
    Miss,
    Clean,
    Grazing,
}

fn ray_hit(o: &Vec3, d: &Vec3, t: &[Vec3; 3]) -> Hit {
    const EDGE_EPS: f64 = 1e-9;
    let (e1, e2) = (t[1] - t[0], t[2] - t[0]);
    let h = d.cross(&e2);
    let det = e1.dot(&h);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-12 * scale {
        return Hit::Miss;
    }
    let inv = 1.0 / det;
    let s = o - t[0];
    let u = s.dot(&h) * inv;
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    let dist = e2.dot(&q) * inv;
    if dist <= 0.0 || u < -EDGE_EPS || v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return Hit::Miss;
    }
    if u < EDGE_EPS || v < EDGE_EPS || u + v > 1.0 - EDGE_EPS {
        return Hit::Grazing;
    }
    Hit::Clean
}

/// Removes branch triangles whose centroid lies inside `main` and bridges the
/// cut rim of the branch to the nearest `main` vertices with a triangle strip.
/// The result is a connected union but is not watertight.
pub fn merge_branches(main: &TriMesh, branch: &TriMesh) -> Result<(TriMesh, JunctionReport)> {
    if main.is_empty() || branch.is_empty() {
        return Err(Error::Merge("empty input mesh".into()));
    }
    let inside: Vec<bool> =
        (0..branch.triangles().len()).into_par_iter().map(|t| is_inside(main, &branch.centroid(t))).collect();
    let removed = inside.iter().filter(|&&b| b).count();
    if removed == 0 {
        return Err(Error::Merge("branch does not overlap the main mesh".into()));
    }
    if removed == inside.len() {
        return Err(Error::Merge("branch lies entirely inside the main mesh".into()));
    }
    let kept: Vec<[usize; 3]> =
        branch.triangles().iter().zip(&inside).filter(|(_, &i)| !i).map(|(t, _)| *t).collect();

    let original_boundary = directed_boundary(branch.triangles());
    let cut: Vec<(usize, usize)> = directed_boundary(&kept)
        .into_iter()
        .filter(|e| !original_boundary.contains(e))
        .collect();

    let off = main.vertices().len();
    let mut vertices = main.vertices().to_vec();
    vertices.extend_from_slice(branch.vertices());
    let mut triangles = main.triangles().to_vec();
    triangles.extend(kept.iter().map(|t| t.map(|i| i + off)));

    let rim: BTreeSet<usize> = cut.iter().flat_map(|&(a, b)| [a, b]).collect();
    let nearest: BTreeMap<usize, usize> = rim
        .iter()
        .map(|&v| {
            let p = branch.vertices()[v];
            let best = (0..main.vertices().len())
                .min_by(|&a, &b| (main.vertices()[a] - p).norm_squared().total_cmp(&(main.vertices()[b] - p).norm_squared()))
                .expect("main has vertices");
            (v, best)
        })
        .collect();
    let mut bridge = 0;
    for &(a, b) in &cut {
        let (ma, mb) = (nearest[&a], nearest[&b]);
        triangles.push([b + off, a + off, ma]);
        bridge += 1;
        if ma != mb {
            triangles.push([b + off, ma, mb]);
            bridge += 1;
        }
    }
    let lengths: Vec<f64> = nearest.iter().map(|(&v, &m)| (branch.vertices()[v] - main.vertices()[m]).norm()).collect();
    let report = JunctionReport {
        removed_triangles: removed,
        bridge_triangles: bridge,
        bridged_vertices: lengths.len(),
        max_bridge_length: lengths.iter().copied().fold(0.0, f64::max),
        mean_bridge_length: if lengths.is_empty() { 0.0 } else { lengths.iter().sum::<f64>() / lengths.len() as f64 },
    };
    Ok((compact(&vertices, &triangles), report))
}

/// Directed edges used by exactly one triangle (undirected), in triangle order.
fn directed_boundary(triangles: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if count[&(a.min(b), a.max(b))] == 1 {
                out.push((a, b));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures::cube, tube_mesh};
    use super::*;
    use std::f64::consts::PI;

    fn tube(center: Vec3, axis: Vec3, r: f64, len: f64, nu: usize, nv: usize, caps: bool) -> TriMesh {
        let axis = axis.normalize();
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        let rows: Vec<Vec<Vec3>> = (0..nu)
            .map(|i| {
                let c = center + axis * (len * i as f64 / (nu - 1) as f64);
                (0..nv)
                    .map(|j| {
                        let a = 2.0 * PI * j as f64 / nv as f64;
                        c + (e1 * a.cos() + e2 * a.sin()) * r
                    })
                    .collect()
            })
            .collect();
        tube_mesh(&rows, caps)
    }

    /// Independent inside test for a z-aligned capped cylinder.
    fn in_cylinder(p: &Vec3, r: f64, z0: f64, z1: f64) -> bool {
        (p.x * p.x + p.y * p.y).sqrt() < r && p.z > z0 && p.z < z1
    }

    #[test]
    fn parity_matches_cube() {
        let c = cube(Vec3::zeros());
        assert!(is_inside(&c, &Vec3::new(0.5, 0.5, 0.5)));
        // ray through the face diagonal grazes and falls back to another ray
        assert!(is_inside(&c, &Vec3::new(0.2, 0.7, 0.7)));
        assert!(!is_inside(&c, &Vec3::new(1.5, 0.5, 0.5)));
        assert!(!is_inside(&c, &Vec3::new(-0.5, 0.5, 0.5)));
    }

    #[test]
    fn perpendicular_branch() {
        let main = tube(Vec3::new(0.0, 0.0, -10.0), Vec3::z(), 5.0, 20.0, 41, 64, true);
        let branch = tube(Vec3::zeros(), Vec3::x(), 2.0, 12.0, 49, 24, false);
        let (merged, report) = merge_branches(&main, &branch).unwrap();
        assert!(report.removed_triangles > 0);
        let removed: Vec<usize> =
            (0..branch.triangles().len()).filter(|&t| is_inside(&main, &branch.centroid(t))).collect();
        assert_eq!(removed.len(), report.removed_triangles);
        for &t in &removed {
            assert!(in_cylinder(&branch.centroid(t), 5.0, -10.0, 10.0));
        }
        for t in 0..branch.triangles().len() {
            if !removed.contains(&t) {
                assert!(!in_cylinder(&branch.centroid(t), 5.0 - 0.05, -10.0, 10.0));
            }
        }
        // rings are 0.25 mm apart along the branch
        assert!(report.max_bridge_length <= 2.0 * 0.25 + 0.5, "{report:?}");
        assert_eq!(merged.triangles().len(), main.triangles().len() + branch.triangles().len() - removed.len() + report.bridge_triangles);
        assert!(!merged.validate().watertight);
    }

    #[test]
    fn branch_outside_or_inside() {
        let main = tube(Vec3::new(0.0, 0.0, -10.0), Vec3::z(), 5.0, 20.0, 21, 32, true);
        let far = tube(Vec3::new(20.0, 0.0, 0.0), Vec3::x(), 2.0, 5.0, 8, 16, false);
        assert!(matches!(merge_branches(&main, &far), Err(Error::Merge(_))));
        let inner = tube(Vec3::new(-1.0, 0.0, 0.0), Vec3::x(), 1.0, 2.0, 8, 16, false);
        assert!(matches!(merge_branches(&main, &inner), Err(Error::Merge(_))));
    }
}
