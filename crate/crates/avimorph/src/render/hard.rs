//! Hard silhouette rasterizer (evaluation oracle and synthetic ground
//! truth) plus a per-point surface depth query for visibility tests.
//!
//! A pixel is set iff its center lies inside any projected triangle. Ties
//! on the boundary follow the top-left fill rule: an edge claims its
//! boundary pixels iff it is a top edge (horizontal, interior below) or a
//! left edge, so two triangles sharing an edge never both claim it.

use super::{project, Camera, Mask};
use crate::error::Result;
use crate::mesh::V3;

/// Rasterize already-projected vertices into a binary mask.
pub fn raster_hard(verts2d: &[[f64; 2]], faces: &[[usize; 3]], width: usize, height: usize) -> Mask {
    let mut mask = Mask::zeros(width, height);
    for f in faces {
        let mut a = verts2d[f[0]];
        let mut b = verts2d[f[1]];
        let c = verts2d[f[2]];
        // Force positive orientation so the interior has all edge
        // functions positive.
        let area = edge_fn(a, b, c);
        if area == 0.0 {
            continue; // degenerate: no interior
        }
        if area < 0.0 {
            std::mem::swap(&mut a, &mut b);
        }
        let lo_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let lo_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let hi_x = (a[0].max(b[0]).max(c[0]).ceil() as i64).min(width as i64 - 1);
        let hi_y = (a[1].max(b[1]).max(c[1]).ceil() as i64).min(height as i64 - 1);
        if hi_x < 0 || hi_y < 0 {
            continue;
        }
        for y in lo_y..=hi_y as usize {
            for x in lo_x..=hi_x as usize {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                if inside_top_left(p, a, b, c) {
                    mask.set(x, y, 1);
                }
            }
        }
    }
    mask
}

fn edge_fn(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let dy = b[1] - a[1];
    let dx = b[0] - a[0];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn inside_top_left(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    for (s, e) in [(a, b), (b, c), (c, a)] {
        let w = edge_fn(s, e, p);
        if w < 0.0 || (w == 0.0 && !is_top_left(s, e)) {
            return false;
        }
    }
    true
}

/// Project a posed mesh and rasterize the binary silhouette.
pub fn rasterize_hard(vertices: &[V3], faces: &[[usize; 3]], camera: &Camera) -> Result<Mask> {
    camera.validate()?;
    if vertices.is_empty() || faces.is_empty() {
        return Ok(Mask::zeros(camera.width, camera.height));
    }
    let verts2d = project(camera, vertices)?;
    Ok(raster_hard(&verts2d, faces, camera.width, camera.height))
}

/// Minimum surface depth covering an image point, from screen-space
/// barycentric interpolation of vertex depths. `None` when no projected
/// triangle covers the point.
pub fn surface_depth_at(
    vertices: &[V3],
    verts2d: &[[f64; 2]],
    faces: &[[usize; 3]],
    point: [f64; 2],
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in faces {
        let a = verts2d[f[0]];
        let b = verts2d[f[1]];
        let c = verts2d[f[2]];
        let area = edge_fn(a, b, c);
        if area == 0.0 {
            continue;
        }
        let w0 = edge_fn(b, c, point) / area;
        let w1 = edge_fn(c, a, point) / area;
        let w2 = edge_fn(a, b, point) / area;
        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
            continue;
        }
        let z = w0 * vertices[f[0]].z + w1 * vertices[f[1]].z + w2 * vertices[f[2]].z;
        best = Some(match best {
            Some(cur) => cur.min(z),
            None => z,
        });
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_mesh_gives_all_zero() {
        let cam = Camera::default_for(8, 8);
        let m = rasterize_hard(&[], &[], &cam).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn axis_aligned_square_covers_exact_pixels() {
        // Square [2,6]x[2,6]: centers 2.5..5.5 inside, i.e. pixels 2..=5.
        let verts = vec![[2.0, 2.0], [6.0, 2.0], [6.0, 6.0], [2.0, 6.0]];
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        let m = raster_hard(&verts, &faces, 8, 8);
        assert_eq!(m.count_ones(), 16);
        for y in 2..6 {
            for x in 2..6 {
                assert_eq!(m.get(x, y), 1);
            }
        }
    }

    #[test]
    fn top_left_rule_on_half_integer_square() {
        // Square [1.5,5.5]^2: centers on the left/top edges are claimed,
        // right/bottom are not, and the shared diagonal is claimed once.
        let verts = vec![[1.5, 1.5], [5.5, 1.5], [5.5, 5.5], [1.5, 5.5]];
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        let m = raster_hard(&verts, &faces, 8, 8);
        for y in 1..=5 {
            for x in 1..=5 {
                let expect = u8::from(x < 5 && y < 5);
                assert_eq!(m.get(x, y), expect, "pixel ({x},{y})");
            }
        }

        // Shared-edge exclusivity: rasterize the two triangles separately
        // and check no pixel is claimed twice or dropped.
        let t1 = raster_hard(&verts, &[[0, 1, 2]], 8, 8);
        let t2 = raster_hard(&verts, &[[0, 2, 3]], 8, 8);
        for i in 0..64 {
            assert_eq!(t1.data[i] + t2.data[i], m.data[i], "pixel {i}");
        }
    }

    #[test]
    fn random_triangles_match_pointwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let verts: Vec<[f64; 2]> = (0..3)
                .map(|_| [rng.gen_range(-2.0..18.0), rng.gen_range(-2.0..18.0)])
                .collect();
            let faces = vec![[0, 1, 2]];
            let m = raster_hard(&verts, &faces, 16, 16);
            for y in 0..16 {
                for x in 0..16 {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    // Strict-interior oracle; boundary hits are measure-zero
                    // for random triangles.
                    let c0 = edge_fn(verts[0], verts[1], p);
                    let c1 = edge_fn(verts[1], verts[2], p);
                    let c2 = edge_fn(verts[2], verts[0], p);
                    let inside =
                        (c0 > 0.0 && c1 > 0.0 && c2 > 0.0) || (c0 < 0.0 && c1 < 0.0 && c2 < 0.0);
                    assert_eq!(m.get(x, y) == 1, inside, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn depth_query_prefers_nearer_surface() {
        let vertices = vec![
            V3::new(-1.0, -1.0, 2.0),
            V3::new(1.0, -1.0, 2.0),
            V3::new(0.0, 1.0, 2.0),
            V3::new(-1.0, -1.0, 5.0),
            V3::new(1.0, -1.0, 5.0),
            V3::new(0.0, 1.0, 5.0),
        ];
        let cam = Camera::default_for(16, 16);
        let verts2d = project(&cam, &vertices).unwrap();
        let faces = vec![[0, 1, 2], [3, 4, 5]];
        // Both triangles project over the principal point area; the near one wins.
        let z = surface_depth_at(&vertices, &verts2d, &faces, [8.0, 7.0]).unwrap();
        assert!((z - 2.0).abs() < 1e-9);
    }
}
