//! Point-set metrics (Chamfer, Hausdorff, earth mover's) and voxel-mask
//! metrics (Dice, average surface distance, mask Hausdorff).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::meshkit::TriMesh;
use crate::{Error, Result, Vec3, Volume};

/// Largest set size accepted by the exact matching in [`emd`].
pub const EMD_CAP: usize = 256;

/// Static 3-d tree over a point set for nearest-neighbor queries.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        Self { points, order }
    }

    /// Index of and distance to the closest point; `None` for an empty tree.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.order.len(), 0, q, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, q: &Vec3, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, depth + 1, q, best);
        if delta * delta <= best.1 {
            self.search(far.0, far.1, depth + 1, q, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

fn check(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    if a.iter().chain(b).any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("point set"));
    }
    Ok(())
}

/// Distance from every point of `from` to its nearest neighbor in `to`.
pub fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.par_iter().map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d)| d)).collect()
}

/// Symmetric Chamfer distance: half the sum of both mean nearest-neighbor
/// distances (not squared).
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check(a, b)?;
    let mean = |d: Vec<f64>| d.iter().sum::<f64>() / d.len() as f64;
    Ok(0.5 * (mean(nearest_distances(a, b)) + mean(nearest_distances(b, a))))
}

pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check(a, b)?;
    let max = |d: Vec<f64>| d.into_iter().fold(0.0, f64::max);
    Ok(max(nearest_distances(a, b)).max(max(nearest_distances(b, a))))
}

/// Mean Euclidean cost of the optimal perfect matching between equal-size
/// sets.
pub fn emd(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check(a, b)?;
    if a.len() != b.len() {
        return Err(Error::CountMismatch(a.len(), b.len()));
    }
    if a.len() > EMD_CAP {
        return Err(Error::EmdTooLarge { cap: EMD_CAP, got: a.len() });
    }
    let cost: Vec<Vec<f64>> = a.iter().map(|p| b.iter().map(|q| (p - q).norm()).collect()).collect();
    let assignment = hungarian(&cost);
    Ok(assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / a.len() as f64)
}

/// Minimum-cost assignment for a square cost matrix; entry `i` of the result
/// is the column matched to row `i`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // potentials and matching are 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    out
}

/// How a mesh becomes a point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    Vertices,
    AreaUniform { n: usize, seed: u64 },
}

pub fn mesh_points(m: &TriMesh, source: PointSource) -> Result<Vec<Vec3>> {
    match source {
        PointSource::Vertices => {
            let mut used: Vec<usize> = m.triangles().iter().flatten().copied().collect();
            used.sort_unstable();
            used.dedup();
            if used.is_empty() {
                return Err(Error::EmptySet);
            }
            Ok(used.into_iter().map(|i| m.vertices()[i]).collect())
        }
        PointSource::AreaUniform { n, seed } => m.sample_points(n, &mut ChaCha8Rng::seed_from_u64(seed)),
    }
}

/// Binary voxel mask on a grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub bits: Vec<bool>,
}

impl VoxelMask {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], bits: Vec<bool>) -> Result<Self> {
        let n = dims.iter().product();
        if bits.len() != n {
            return Err(Error::SizeMismatch { expected: n, actual: bits.len() });
        }
        Ok(Self { dims, spacing, bits })
    }

    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self { dims, spacing, bits }
    }

    /// Voxels at or above `threshold`.
    pub fn threshold(v: &Volume, threshold: f64) -> Self {
        Self { dims: v.dims(), spacing: v.spacing(), bits: v.data().iter().map(|&x| x >= threshold).collect() }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Mask voxels with at least one face neighbor outside the mask or grid.
    pub fn boundary_points(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if !self.get(x, y, z) {
                        continue;
                    }
                    let p = [x, y, z];
                    let exposed = (0..3).any(|a| {
                        let lo = p[a] == 0 || {
                            let mut q = p;
                            q[a] -= 1;
                            !self.get(q[0], q[1], q[2])
                        };
                        let hi = p[a] + 1 == self.dims[a] || {
                            let mut q = p;
                            q[a] += 1;
                            !self.get(q[0], q[1], q[2])
                        };
                        lo || hi
                    });
                    if exposed {
                        out.push(Vec3::new(
                            x as f64 * self.spacing[0],
                            y as f64 * self.spacing[1],
                            z as f64 * self.spacing[2],
                        ));
                    }
                }
            }
        }
        out
    }

    fn same_grid(&self, other: &VoxelMask) -> Result<()> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(Error::Invalid("masks differ in dims or spacing".into()));
        }
        Ok(())
    }
}

/// `2|A∩B| / (|A| + |B|)`, and 1 when both masks are empty.
pub fn dice(a: &VoxelMask, b: &VoxelMask) -> Result<f64> {
    a.same_grid(b)?;
    let both = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x && **y).count();
    let total = a.count() + b.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

/// Average symmetric surface distance between mask boundaries, mm.
pub fn asd(a: &VoxelMask, b: &VoxelMask) -> Result<f64> {
    a.same_grid(b)?;
    chamfer(&a.boundary_points(), &b.boundary_points())
}

/// Hausdorff distance between mask boundaries, mm.
pub fn hd_mask(a: &VoxelMask, b: &VoxelMask) -> Result<f64> {
    a.same_grid(b)?;
    hausdorff(&a.boundary_points(), &b.boundary_points())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd_mm: Option<f64>,
    pub hd_mm: Option<f64>,
    pub emd_mm: Option<f64>,
    pub dice: Option<f64>,
    pub asd_mm: Option<f64>,
    pub hd_mask_mm: Option<f64>,
    pub inputs: Vec<String>,
    pub seeds: Vec<u64>,
}

impl MetricReport {
    /// CD and HD from area-uniform samples, EMD from an [`EMD_CAP`]-point
    /// subsample of each mesh.
    pub fn for_meshes(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<Self> {
        let pa = mesh_points(a, PointSource::AreaUniform { n, seed })?;
        let pb = mesh_points(b, PointSource::AreaUniform { n, seed: seed.wrapping_add(1) })?;
        let ea = mesh_points(a, PointSource::AreaUniform { n: EMD_CAP, seed: seed.wrapping_add(2) })?;
        let eb = mesh_points(b, PointSource::AreaUniform { n: EMD_CAP, seed: seed.wrapping_add(3) })?;
        Ok(Self {
            cd_mm: Some(chamfer(&pa, &pb)?),
            hd_mm: Some(hausdorff(&pa, &pb)?),
            emd_mm: Some(emd(&ea, &eb)?),
            seeds: vec![seed],
            ..Self::default()
        })
    }
}
