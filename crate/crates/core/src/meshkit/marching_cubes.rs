use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::TriMesh;
use crate::{Error, Result, Vec3, Volume};

/// Cube corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
pub const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]];

/// Cube edges as corner pairs; the lower corner comes first.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [2, 3],
    [4, 5],
    [6, 7],
    [0, 2],
    [1, 3],
    [4, 6],
    [5, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] =
    [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners")
}

/// Triangles (as cube-edge triples) for each of the 256 inside/outside
/// corner configurations; bit `c` of the case index marks corner `c` inside.
///
/// The table is generated from one rule applied per face: every maximal run
/// of inside corners along the face cycle is cut off by a single segment.
/// Neighboring cells see a shared face identically, so the surface closes,
/// and each ambiguous face keeps its inside corners separated.
pub fn case_table() -> &'static [Vec<[usize; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[usize; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

fn build_case(case: usize) -> Vec<[usize; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    // segment per run: from the edge entering the run to the edge leaving it
    let mut next_of: HashMap<usize, usize> = HashMap::new();
    for face in FACES {
        let flags: Vec<bool> = face.iter().map(|&c| inside(c)).collect();
        if flags.iter().all(|&f| f) || flags.iter().all(|&f| !f) {
            continue;
        }
        for k in 0..4 {
            let prev = (k + 3) % 4;
            if flags[k] && !flags[prev] {
                let mut end = k;
                while flags[(end + 1) % 4] {
                    end = (end + 1) % 4;
                }
                let enter = edge_between(face[prev], face[k]);
                let leave = edge_between(face[end], face[(end + 1) % 4]);
                next_of.insert(enter, leave);
            }
        }
    }
    let mut starts: Vec<usize> = next_of.keys().copied().collect();
    starts.sort_unstable();
    let mut done = [false; 12];
    let mut tris = Vec::new();
    for s in starts {
        if done[s] {
            continue;
        }
        let mut poly = vec![s];
        done[s] = true;
        let mut cur = next_of[&s];
        while cur != s {
            done[cur] = true;
            poly.push(cur);
            cur = next_of[&cur];
        }
        let (a, b) = (0, poly.len() - 1);
        if !triangulate(&poly, a, b, &mut tris) {
            unreachable!("case {case}: polygon {poly:?} has no interior triangulation");
        }
    }
    tris
}

fn on_common_face(e: usize, f: usize) -> bool {
    let [a, b] = EDGES[e];
    let [c, d] = EDGES[f];
    FACES.iter().any(|face| [a, b, c, d].iter().all(|x| face.contains(x)))
}

/// Triangulates the sub-polygon `poly[a..=b]` (closed by the chord `a-b`)
/// using only diagonals that pass through the cell interior. A diagonal lying
/// in a cube face would be emitted again by the neighbor sharing that face.
fn triangulate(poly: &[usize], a: usize, b: usize, out: &mut Vec<[usize; 3]>) -> bool {
    if b - a < 2 {
        return true;
    }
    let n = poly.len();
    let chord_ok = |i: usize, j: usize| j - i == 1 || (i == 0 && j == n - 1) || !on_common_face(poly[i], poly[j]);
    for k in a + 1..b {
        if !chord_ok(a, k) || !chord_ok(k, b) {
            continue;
        }
        let mark = out.len();
        if triangulate(poly, a, k, out) && triangulate(poly, k, b, out) {
            out.push([poly[a], poly[k], poly[b]]);
            return true;
        }
        out.truncate(mark);
    }
    false
}

/// Iso-surface of `{v >= iso}` with outward-facing triangles. Vertices are
/// interpolated linearly along cell edges in world coordinates and shared
/// between cells through their grid-edge key.
pub fn marching_cubes(v: &Volume, iso: f64) -> Result<TriMesh> {
    let (lo, hi) = v.min_max();
    if !(iso > lo && iso < hi) {
        return Err(Error::IsoOutOfRange { iso, min: lo, max: hi });
    }
    let [nx, ny, nz] = v.dims();
    let table = case_table();
    let key = |x: usize, y: usize, z: usize, axis: usize| (v.linear_index(x, y, z), axis);

    // per z-slab triangle lists of global edge keys, in cell order
    let slabs: Vec<Vec<[(usize, usize); 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::new();
            for y in 0..ny - 1 {
                for x in 0..nx - 1 {
                    let mut case = 0;
                    for (c, o) in CORNERS.iter().enumerate() {
                        if v.get(x + o[0], y + o[1], z + o[2]) >= iso {
                            case |= 1 << c;
                        }
                    }
                    for tri in &table[case] {
                        out.push(tri.map(|e| {
                            let [a, b] = EDGES[e];
                            let (oa, ob) = (CORNERS[a], CORNERS[b]);
                            let axis = (0..3).find(|&k| oa[k] != ob[k]).expect("edge axis");
                            key(x + oa[0], y + oa[1], z + oa[2], axis)
                        }));
                    }
                }
            }
            out
        })
        .collect();

    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let step = [1, nx, nx * ny];
    for tri in slabs.into_iter().flatten() {
        let t = tri.map(|(lin, axis)| {
            *index.entry((lin, axis)).or_insert_with(|| {
                let (ia, ib) = (lin, lin + step[axis]);
                let (va, vb) = (v.data()[ia], v.data()[ib]);
                let pa = world_of(v, ia);
                let pb = world_of(v, ib);
                let s = (iso - va) / (vb - va);
                vertices.push(pa + (pb - pa) * s);
                vertices.len() - 1
            })
        });
        triangles.push(t);
    }
    TriMesh::new(vertices, triangles)
}

fn world_of(v: &Volume, lin: usize) -> Vec3 {
    let [nx, ny, _] = v.dims();
    v.index_to_world(lin % nx, (lin / nx) % ny, lin / (nx * ny))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_volume(n: usize, r: f64, spacing: f64) -> Volume {
        let c = (n - 1) as f64 * spacing / 2.0;
        // ramp crossing 0.5 exactly at radius r
        Volume::from_fn([n; 3], [spacing; 3], [0.0; 3], |p| {
            let d = (p - Vec3::repeat(c)).norm();
            (0.5 - (d - r) / spacing).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn every_case_is_closed_per_cube() {
        for (case, tris) in case_table().iter().enumerate() {
            let crossing = EDGES.iter().filter(|[a, b]| ((case >> a) & 1) != ((case >> b) & 1)).count();
            let mut used: Vec<usize> = tris.iter().flatten().copied().collect();
            used.sort_unstable();
            used.dedup();
            assert_eq!(used.len(), crossing, "case {case}");
            // the only in-face triangle edges are the face segments, one per crossing edge
            let in_face = tris
                .iter()
                .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
                .filter(|&(e, f)| on_common_face(e, f))
                .count();
            assert_eq!(in_face, crossing, "case {case}");
        }
        assert!(case_table()[0].is_empty() && case_table()[255].is_empty());
        // one corner: a single triangle; complementary cases agree on edge usage
        assert_eq!(case_table()[1].len(), 1);
        assert_eq!(case_table()[0b1000_0000].len(), 1);
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let (n, r, h) = (32, 9.0, 0.7);
        let v = sphere_volume(n, r, h);
        let m = marching_cubes(&v, 0.5).unwrap();
        let t = m.validate();
        assert!(t.watertight, "{t:?}");
        assert_eq!(t.euler_characteristic, 2);
        assert_eq!(t.non_manifold_edge_count, 0);
        assert!(m.signed_volume() > 0.0);
        let c = Vec3::repeat((n - 1) as f64 * h / 2.0);
        let worst = m.vertices().iter().map(|p| ((p - c).norm() - r).abs()).fold(0.0, f64::max);
        assert!(worst <= h, "max radial error {worst}");
        let expected = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((m.signed_volume() - expected).abs() / expected < 0.02);
    }

    #[test]
    fn two_touching_blobs_stay_manifold() {
        // corners diagonal across a face exercise the ambiguous face case
        let v = Volume::from_fn([6, 6, 6], [1.0; 3], [0.0; 3], |p| {
            let on = |q: Vec3| (p - q).norm() < 0.1;
            if on(Vec3::new(2.0, 2.0, 2.0)) || on(Vec3::new(3.0, 3.0, 2.0)) || on(Vec3::new(3.0, 2.0, 3.0)) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let t = marching_cubes(&v, 0.5).unwrap().validate();
        assert!(t.watertight, "{t:?}");
        assert_eq!(t.euler_characteristic, 6);
    }

    #[test]
    fn random_fields_are_watertight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut data: Vec<f64> = (0..8 * 8 * 8).map(|_| rng.random::<f64>()).collect();
            // keep the border outside so every component closes
            for z in 0..8 {
                for y in 0..8 {
                    for x in 0..8 {
                        if [x, y, z].iter().any(|&c| c == 0 || c == 7) {
                            data[x + 8 * (y + 8 * z)] = 0.0;
                        }
                    }
                }
            }
            let v = Volume::new([8; 3], [1.0; 3], [0.0; 3], data).unwrap();
            let t = marching_cubes(&v, 0.5).unwrap().validate();
            assert!(t.manifold && t.consistent_orientation && t.boundary_loop_count == 0, "{t:?}");
        }
    }

    #[test]
    fn iso_out_of_range() {
        let v = Volume::from_fn([4; 3], [1.0; 3], [0.0; 3], |_| 0.3).unwrap();
        assert!(matches!(marching_cubes(&v, 0.5), Err(Error::IsoOutOfRange { .. })));
    }
}
