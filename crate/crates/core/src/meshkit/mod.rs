//! Triangle meshes: container, topology checks, marching cubes, branch
//! merging and OBJ/STL files.

mod io;
mod marching_cubes;
mod merge;
mod topology;

use rand::Rng;

use crate::{Error, Result, Vec3};

pub use io::{read_obj, read_stl, write_obj, write_stl};
pub use marching_cubes::{case_table, marching_cubes, CORNERS, EDGES};
pub use merge::{is_inside, merge_branches, JunctionReport};
pub use topology::{segments_hit_triangle, TopologyReport};

/// Triangles below this area count as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertex"));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal; its length is twice the area.
    pub fn cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.cross(t).norm()
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Divergence-theorem volume; positive for outward-facing closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])))
            .sum::<f64>()
            / 6.0
    }

    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Drops triangles with repeated indices or near-zero area, duplicate
    /// triangles and unreferenced vertices.
    pub fn cleaned(&self) -> TriMesh {
        let mut seen = std::collections::HashSet::new();
        let keep: Vec<[usize; 3]> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) >= DEGENERATE_AREA
            })
            .map(|t| self.triangles[t])
            .filter(|t| {
                let mut key = *t;
                key.sort_unstable();
                seen.insert(key)
            })
            .collect();
        compact(&self.vertices, &keep)
    }

    /// Concatenates two meshes without welding.
    pub fn union(&self, other: &TriMesh) -> TriMesh {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut triangles = self.triangles.clone();
        triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + off)));
        TriMesh { vertices, triangles }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        self.vertices.iter().fold((Vec3::repeat(f64::MAX), Vec3::repeat(f64::MIN)), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        })
    }

    /// `n` points distributed uniformly by area.
    pub fn sample_points<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cdf.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::EmptySet);
        }
        Ok((0..n)
            .map(|_| {
                let x = rng.random::<f64>() * total;
                let t = cdf.partition_point(|&c| c < x).min(cdf.len() - 1);
                let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                let [a, b, c] = self.corners(t);
                a + (b - a) * r1 + (c - a) * r2
            })
            .collect())
    }

    pub fn validate(&self) -> TopologyReport {
        topology::validate(self)
    }
}

/// Keeps only vertices referenced by `triangles`, preserving their order.
pub(crate) fn compact(vertices: &[Vec3], triangles: &[[usize; 3]]) -> TriMesh {
    let mut map = vec![usize::MAX; vertices.len()];
    let mut used: Vec<usize> = triangles.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let mut out_v = Vec::with_capacity(used.len());
    for &i in &used {
        map[i] = out_v.len();
        out_v.push(vertices[i]);
    }
    TriMesh { vertices: out_v, triangles: triangles.iter().map(|t| t.map(|i| map[i])).collect() }
}

/// Quad-strip tube through `rows` (each a closed ring of equal length),
/// optionally closed with fan caps around the ring centroids. Faces point
/// outward whenever the capped tube has positive volume.
pub fn tube_mesh(rows: &[Vec<Vec3>], caps: bool) -> TriMesh {
    let nu = rows.len();
    let nv = rows.first().map_or(0, |r| r.len());
    let mut vertices: Vec<Vec3> = rows.iter().flatten().copied().collect();
    let id = |i: usize, j: usize| i * nv + j % nv;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu.saturating_sub(1) {
        for j in 0..nv {
            triangles.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
        }
    }
    let sides = triangles.len();
    let centroid = |r: &[Vec3]| r.iter().sum::<Vec3>() / r.len() as f64;
    let (c0, c1) = (vertices.len(), vertices.len() + 1);
    vertices.push(centroid(&rows[0]));
    vertices.push(centroid(&rows[nu - 1]));
    for j in 0..nv {
        triangles.push([c0, id(0, j + 1), id(0, j)]);
        triangles.push([c1, id(nu - 1, j), id(nu - 1, j + 1)]);
    }
    let mut mesh = TriMesh { vertices, triangles };
    if mesh.signed_volume() < 0.0 {
        mesh = mesh.flipped();
    }
    if !caps {
        mesh.triangles.truncate(sides);
        mesh.vertices.truncate(c0);
    }
    mesh
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Unit cube with outward faces, 12 triangles.
    pub fn cube(offset: Vec3) -> TriMesh {
        let v: Vec<Vec3> = (0..8)
            .map(|c| offset + Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64))
            .collect();
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let t = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        TriMesh::new(v, t).unwrap()
    }
}
