//! Wavefront OBJ meshes: `v x y z` and `f i j k` records, 1-based
//! indices. Floats print in Rust's shortest round-trip form, so vertex
//! payloads survive write/read bit-exactly. Polygon faces are
//! fan-triangulated on read; `i/t/n` index forms take the vertex index.

use super::atomic_write;
use crate::error::{Error, Result};
use crate::mesh::V3;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_obj(path: &Path, vertices: &[V3], faces: &[[usize; 3]]) -> Result<()> {
    let mut out = String::with_capacity(vertices.len() * 32 + faces.len() * 16);
    for v in vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_obj(path: &Path) -> Result<(Vec<V3>, Vec<[usize; 3]>)> {
    let text = super::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in coords.iter_mut() {
                    *c = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(path, format!("bad vertex at line {}", lineno + 1)))?;
                }
                vertices.push(V3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or(t);
                        first
                            .parse::<usize>()
                            .ok()
                            .and_then(|i| i.checked_sub(1))
                            .ok_or_else(|| {
                                Error::parse(path, format!("bad face index at line {}", lineno + 1))
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(path, format!("face with < 3 vertices at line {}", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {} // comments, vn/vt, groups: ignored
        }
    }
    for f in &faces {
        for &i in f {
            if i >= vertices.len() {
                return Err(Error::parse(path, format!("face index {} out of range", i + 1)));
            }
        }
    }
    Ok((vertices, faces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn obj_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vertices: Vec<V3> = (0..20)
            .map(|_| {
                V3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen::<f64>() * 1e-7,
                    rng.gen_range(-100.0..100.0),
                )
            })
            .collect();
        let faces = vec![[0, 1, 2], [3, 4, 5], [10, 11, 19]];
        write_obj(&path, &vertices, &faces).unwrap();
        let (v2, f2) = read_obj(&path).unwrap();
        assert_eq!(faces, f2);
        for (a, b) in vertices.iter().zip(&v2) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn reads_slashed_indices_and_quads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.obj");
        std::fs::write(
            &path,
            "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n",
        )
        .unwrap();
        let (v, f) = read_obj(&path).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn rejects_out_of_range_faces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(read_obj(&path).is_err());
    }
}
