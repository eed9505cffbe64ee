//! Prompt-seeded lumen segmentation on a slice, outer boundary tracing and
//! uniform contour resampling.
//!
//! The segmenter is a threshold flood fill seeded at the projected
//! centerline point. External masks (PGM) can be substituted through
//! [`Mask::read_pgm`].

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::slicer::{Slice, SlicePlane};
use crate::{Error, Result, Vec3};

/// Radius (pixels) searched for an above-threshold pixel when the prompt misses.
pub const PROMPT_SEARCH_RADIUS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourSpace {
    /// In-plane millimetres `(b, n, 0)`.
    Plane,
    World,
}

/// Closed polyline; the last point connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<Vec3>,
    space: ContourSpace,
}

impl Contour {
    pub fn new(points: Vec<Vec3>, space: ContourSpace) -> Result<Self> {
        if points.len() < 8 {
            return Err(Error::ContourTooShort(points.len()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("contour"));
        }
        Ok(Self { points, space })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn space(&self) -> ContourSpace {
        self.space
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn perimeter(&self) -> f64 {
        closed_edges(&self.points).map(|(a, b)| (b - a).norm()).sum()
    }

    /// Vector area (Newell); its length is the enclosed area of a planar loop.
    pub fn vector_area(&self) -> Vec3 {
        closed_edges(&self.points).fold(Vec3::zeros(), |acc, (a, b)| acc + a.cross(b) * 0.5)
    }

    /// Signed area in the `(x, y)` plane; positive when counter-clockwise.
    pub fn signed_area_xy(&self) -> f64 {
        self.vector_area().z
    }

    /// Same contour with index `k` moved to index 0.
    pub fn rotated(&self, k: usize) -> Contour {
        let mut points = self.points.clone();
        points.rotate_left(k % self.points.len());
        Contour { points, space: self.space }
    }

    /// O(M²) check that no two non-adjacent edges intersect, after projecting
    /// onto the plane of the contour's vector area.
    pub fn is_simple(&self) -> bool {
        let normal = self.vector_area();
        let Some(normal) = normal.try_normalize(1e-300) else { return false };
        let helper = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = normal.cross(&helper).normalize();
        let e2 = normal.cross(&e1);
        let p2: Vec<(f64, f64)> = self.points.iter().map(|p| (p.dot(&e1), p.dot(&e2))).collect();
        let m = p2.len();
        for i in 0..m {
            for j in i + 1..m {
                if j == i + 1 || (i == 0 && j == m - 1) {
                    continue;
                }
                if segments_intersect(p2[i], p2[(i + 1) % m], p2[j], p2[(j + 1) % m]) {
                    return false;
                }
            }
        }
        true
    }
}

fn closed_edges(p: &[Vec3]) -> impl Iterator<Item = (&Vec3, &Vec3)> {
    p.iter().zip(p.iter().cycle().skip(1)).take(p.len())
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let on_segment = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
    };
    let (d1, d2, d3, d4) = (orient(c, d, a), orient(c, d, b), orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Binary mask over an `n × n` slice, row-major like [`Slice::pixels`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    bits: Vec<bool>,
    /// Seed pixel `(i, j)` the fill started from.
    pub prompt: (usize, usize),
}

impl Mask {
    pub fn new(n: usize, bits: Vec<bool>, prompt: (usize, usize)) -> Result<Self> {
        if bits.len() != n * n {
            return Err(Error::SizeMismatch { expected: n * n, actual: bits.len() });
        }
        Ok(Self { n, bits, prompt })
    }

    pub fn from_fn(n: usize, prompt: (usize, usize), f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..n * n).map(|k| f(k % n, k / n)).collect();
        Self { n, bits, prompt }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.n + i]
    }

    fn get_signed(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.n && (j as usize) < self.n && self.get(i as usize, j as usize)
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut s = format!("P2\n{0} {0}\n1\n", self.n);
        for j in 0..self.n {
            let row: Vec<&str> = (0..self.n).map(|i| if self.get(i, j) { "1" } else { "0" }).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        fs::write(path, s)?;
        Ok(())
    }

    /// Reads a P2 or P5 PGM; any nonzero pixel is foreground.
    pub fn read_pgm(path: &Path, prompt: (usize, usize)) -> Result<Mask> {
        let bytes = crate::error::read_bytes(path)?;
        let (w, h, maxval, offset, binary) = parse_pgm_header(&bytes)?;
        if w != h {
            return Err(Error::Parse(format!("mask must be square, got {w}x{h}")));
        }
        let bits: Vec<bool> = if binary {
            let width = if maxval > 255 { 2 } else { 1 };
            let data = &bytes[offset..];
            if data.len() < w * h * width {
                return Err(Error::Parse("truncated PGM payload".into()));
            }
            data.chunks_exact(width).take(w * h).map(|c| c.iter().any(|&b| b != 0)).collect()
        } else {
            let text = std::str::from_utf8(&bytes[offset..]).map_err(|e| Error::Parse(e.to_string()))?;
            text.split_whitespace()
                .take(w * h)
                .map(|t| t.parse::<u32>().map(|v| v != 0).map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?
        };
        Mask::new(w, bits, prompt)
    }
}

fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize, bool)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    let binary = match fields[0].as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(Error::Parse(format!("unsupported PGM magic {other}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
    Ok((num(&fields[1])?, num(&fields[2])?, num(&fields[3])?, pos + 1, binary))
}

/// Pixel nearest to the plane center, used as the default prompt.
pub fn default_prompt(n_pix: usize) -> (usize, usize) {
    let c = (n_pix - 1) / 2;
    (c, c)
}

/// 4-connected flood fill of `{pixel >= threshold}` from the prompt. A prompt
/// below threshold moves to the nearest qualifying pixel within
/// [`PROMPT_SEARCH_RADIUS`], ties broken in row-major order.
pub fn segment_slice(s: &Slice, prompt: (usize, usize), threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let n = s.plane.n_pix;
    let above = |i: usize, j: usize| s.get(i, j) >= threshold;
    let seed = if above(prompt.0, prompt.1) {
        prompt
    } else {
        let r = PROMPT_SEARCH_RADIUS as isize;
        let mut best: Option<(isize, (usize, usize))> = None;
        for dj in -r..=r {
            for di in -r..=r {
                let d2 = di * di + dj * dj;
                let (i, j) = (prompt.0 as isize + di, prompt.1 as isize + dj);
                if d2 > r * r || i < 0 || j < 0 || i >= n as isize || j >= n as isize {
                    continue;
                }
                let (i, j) = (i as usize, j as usize);
                // row-major scan: strict improvement keeps the first in (row, col) order
                if above(i, j) && best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, (i, j)));
                }
            }
        }
        best.map(|(_, p)| p)
            .ok_or(Error::SegmentationFailed { threshold, radius: PROMPT_SEARCH_RADIUS })?
    };
    let mut bits = vec![false; n * n];
    let mut queue = VecDeque::from([seed]);
    bits[seed.1 * n + seed.0] = true;
    while let Some((i, j)) = queue.pop_front() {
        let neighbors = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (a, b) in neighbors {
            if a < n && b < n && !bits[b * n + a] && above(a, b) {
                bits[b * n + a] = true;
                queue.push_back((a, b));
            }
        }
    }
    Mask::new(n, bits, seed)
}

/// Counter-clockwise (x right, y up) 8-neighborhood, starting east.
const MOORE: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Moore-neighbor trace of the outer boundary in pixel indices, starting at
/// the smallest `(row, col)` foreground pixel and running counter-clockwise.
pub fn trace_boundary_pixels(m: &Mask) -> Result<Vec<(usize, usize)>> {
    let n = m.size();
    let start = (0..n * n)
        .find(|&k| m.bits()[k])
        .map(|k| ((k % n) as isize, (k / n) as isize))
        .ok_or_else(|| Error::DegenerateContour("empty mask".into()))?;
    let dir_index = |d: (isize, isize)| MOORE.iter().position(|&m| m == d).expect("unit neighbor");

    // returns the next boundary pixel and the direction (from it) of the
    // background pixel examined just before
    let step = |cur: (isize, isize), back_dir: usize| -> Option<((isize, isize), usize)> {
        for k in 1..=8 {
            let d = (back_dir + k) % 8;
            let cand = (cur.0 + MOORE[d].0, cur.1 + MOORE[d].1);
            if m.get_signed(cand.0, cand.1) {
                let prev = (back_dir + k - 1) % 8;
                let prev_pix = (cur.0 + MOORE[prev].0, cur.1 + MOORE[prev].1);
                return Some((cand, dir_index((prev_pix.0 - cand.0, prev_pix.1 - cand.1))));
            }
        }
        None
    };

    let mut out = vec![(start.0 as usize, start.1 as usize)];
    // west of the start pixel is background by construction
    let Some((first, first_back)) = step(start, 4) else {
        return Ok(out);
    };
    let (mut cur, mut back) = (first, first_back);
    let limit = 4 * n * n + 8;
    for _ in 0..limit {
        if cur == start {
            let (next, _) = step(cur, back).expect("start has a foreground neighbor");
            if next == first {
                return Ok(out);
            }
        }
        out.push((cur.0 as usize, cur.1 as usize));
        let (next, nb) = step(cur, back).expect("boundary pixel has a neighbor");
        cur = next;
        back = nb;
    }
    Err(Error::DegenerateContour("boundary trace did not close".into()))
}

/// Outer boundary as an in-plane contour in millimetres, counter-clockwise.
pub fn trace_boundary(m: &Mask, plane: &SlicePlane) -> Result<Contour> {
    if m.area() == 0 {
        return Err(Error::DegenerateContour("empty mask".into()));
    }
    let pix = trace_boundary_pixels(m)?;
    let pts: Vec<Vec3> = pix
        .iter()
        .map(|&(i, j)| {
            let (x, y) = plane.pixel_to_plane(i as f64, j as f64);
            Vec3::new(x, y, 0.0)
        })
        .collect();
    let mut c = Contour::new(pts, ContourSpace::Plane)?;
    if c.signed_area_xy() < 0.0 {
        let mut p = c.points.clone();
        p[1..].reverse();
        c = Contour::new(p, ContourSpace::Plane)?;
    }
    Ok(c)
}

/// `m` points with equal consecutive chords, walking the contour from its
/// maximum-`x` vertex (the `b` axis for in-plane contours) in its own
/// orientation. On circles and straight runs the spacing is also uniform in
/// arc length, and resampling an already resampled contour is a fixed point.
pub fn resample_contour(c: &Contour, m: usize) -> Result<Contour> {
    if m < 8 {
        return Err(Error::ContourTooShort(m));
    }
    let perimeter = c.perimeter();
    if !(perimeter > 1e-12) {
        return Err(Error::DegenerateContour("zero-length contour".into()));
    }
    let seam = c
        .points
        .iter()
        .enumerate()
        .fold(0, |best, (k, p)| if p.x > c.points[best].x { k } else { best });
    let ring = c.rotated(seam);
    let pts = ring.points();
    // two laps so the closing step can run past the seam
    let lap: Vec<Vec3> = pts.iter().chain(pts.iter()).copied().chain(std::iter::once(pts[0])).collect();

    let (mut lo, mut hi) = (0.0, perimeter / m as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match chord_walk(&lap, mid, m) {
            Some((_, arc)) if arc >= perimeter => hi = mid,
            Some(_) => lo = mid,
            None => hi = mid,
        }
        if hi - lo <= 1e-15 * perimeter {
            break;
        }
    }
    let h = 0.5 * (lo + hi);
    let (points, _) = chord_walk(&lap, h, m).ok_or_else(|| Error::DegenerateContour("chord walk failed".into()))?;
    let out = Contour::new(points[..m].to_vec(), c.space)?;
    Ok(out)
}

/// Steps `steps` times along the polyline, each step to the first point at
/// Euclidean distance `h` from the previous one. Returns the visited points
/// (including the start) and the arc length reached by the final step.
fn chord_walk(lap: &[Vec3], h: f64, steps: usize) -> Option<(Vec<Vec3>, f64)> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut cur = lap[0];
    out.push(cur);
    let (mut seg, mut s0) = (0usize, 0.0f64);
    let mut arc_before_seg = 0.0;
    for _ in 0..steps {
        loop {
            if seg + 1 >= lap.len() {
                return None;
            }
            let (a, b) = (lap[seg], lap[seg + 1]);
            let d = b - a;
            let len2 = d.dot(&d);
            if len2 > 0.0 && (b - cur).norm() >= h {
                // exit of the segment from the ball of radius h around cur
                let f = a - cur;
                let bq = f.dot(&d);
                let cq = f.dot(&f) - h * h;
                let disc = (bq * bq - len2 * cq).max(0.0);
                let s = ((-bq + disc.sqrt()) / len2).clamp(s0, 1.0);
                cur = a + d * s;
                s0 = s;
                out.push(cur);
                break;
            }
            arc_before_seg += len2.sqrt();
            seg += 1;
            s0 = 0.0;
        }
    }
    let seg_len = (lap[seg + 1] - lap[seg]).norm();
    Some((out, arc_before_seg + s0 * seg_len))
}
