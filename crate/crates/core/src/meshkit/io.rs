use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriMesh;
use crate::fmt::sig;
use crate::{Error, Result, Vec3};

/// ASCII OBJ with 9 significant digits per coordinate.
pub fn write_obj(m: &TriMesh, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(40 * (m.vertices().len() + m.triangles().len()));
    for v in m.vertices() {
        let _ = writeln!(s, "v {} {} {}", sig(v.x, 9), sig(v.y, 9), sig(v.z, 9));
    }
    for t in m.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads `v` and `f` records; polygons are fan-triangulated and `v/vt/vn`
/// face tokens use the vertex index only.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = crate::error::read_text(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", no + 1))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::Parse(format!("line {}: vertex needs 3 coordinates", no + 1)));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| Error::Parse(format!("line {}: bad index {t}", no + 1)))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        usize::try_from(resolved).map_err(|_| Error::Parse(format!("line {}: bad index {t}", no + 1)))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face needs 3 vertices", no + 1)));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Binary little-endian STL: 80-byte header, triangle count, then 50 bytes
/// per triangle.
pub fn write_stl(m: &TriMesh, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(84 + 50 * m.triangles().len());
    let mut header = [0u8; 80];
    let tag = b"vesselfit binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    let count = u32::try_from(m.triangles().len()).map_err(|_| Error::Invalid("too many triangles for STL".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in 0..m.triangles().len() {
        let n = m.cross(t).try_normalize(0.0).unwrap_or_else(Vec3::zeros);
        for v in std::iter::once(n).chain(m.corners(t)) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads binary STL, welding bit-identical corner positions.
pub fn read_stl(path: &Path) -> Result<TriMesh> {
    let bytes = crate::error::read_bytes(path)?;
    if bytes.len() < 84 {
        return Err(Error::Parse("STL shorter than its header".into()));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(Error::SizeMismatch { expected: 84 + 50 * count, actual: bytes.len() });
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let mut index: HashMap<[u32; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(count);
    for t in 0..count {
        let base = 84 + 50 * t + 12;
        let mut tri = [0; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let o = base + 12 * k;
            let p = [f(o), f(o + 4), f(o + 8)];
            *slot = *index.entry(p.map(f32::to_bits)).or_insert_with(|| {
                vertices.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                vertices.len() - 1
            });
        }
        triangles.push(tri);
    }
    TriMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::cube;
    use super::*;

    #[test]
    fn stl_size_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.stl");
        let c = cube(Vec3::new(0.25, -1.0, 3.5));
        write_stl(&c, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 84 + 12 * 50);
        assert_eq!(u32::from_le_bytes(bytes[80..84].try_into().unwrap()), 12);
        let back = read_stl(&path).unwrap();
        assert_eq!(back.vertices().len(), 8);
        assert!(back.validate().watertight);
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let c = cube(Vec3::new(0.123456789, 1e-3, -7.0 / 3.0));
        write_obj(&c, &path).unwrap();
        let back = read_obj(&path).unwrap();
        assert_eq!(back.triangles(), c.triangles());
        for (a, b) in back.vertices().iter().zip(c.vertices()) {
            assert!((a - b).norm() <= 1e-7);
        }
    }

    #[test]
    fn obj_polygons_and_slashes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.obj");
        fs::write(&path, "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n").unwrap();
        let m = read_obj(&path).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        fs::write(&path, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(read_obj(&path).is_err());
    }
}
