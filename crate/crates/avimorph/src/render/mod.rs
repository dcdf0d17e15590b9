//! Perspective projection and silhouette rasterization.
//!
//! Two rasterizers live here: a soft, differentiable one used inside the
//! fitting energies (`soft`), and a hard point-in-triangle one used as the
//! evaluation oracle and for synthetic ground-truth masks (`hard`).

mod hard;
mod soft;

pub use hard::{rasterize_hard, surface_depth_at};
pub use soft::{render_soft_silhouette, soft_raster, soft_raster_backward, SoftRasterSettings};

use crate::error::{Error, Result};
use crate::mesh::V3;

pub const Z_NEAR: f64 = 1e-3;

/// Pinhole camera. u = f*x/z + cx, v = f*y/z + cy, pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Default rig: focal = 2x image width, principal point at center.
    pub fn default_for(width: usize, height: usize) -> Self {
        Camera {
            focal: 2.0 * width as f64,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::InvalidArgument(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Pinhole projection of a point batch. Errors on the first point at or
/// behind the near plane, identifying its index.
pub fn project(camera: &Camera, points: &[V3]) -> Result<Vec<[f64; 2]>> {
    camera.validate()?;
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if p.z <= Z_NEAR {
            return Err(Error::BehindCamera { index: i, z: p.z });
        }
        out.push([
            camera.focal * p.x / p.z + camera.principal[0],
            camera.focal * p.y / p.z + camera.principal[1],
        ]);
    }
    Ok(out)
}

/// Pull 2D pixel gradients back to the 3D points they were projected from.
pub fn project_backward(camera: &Camera, points: &[V3], grad2d: &[[f64; 2]]) -> Vec<V3> {
    debug_assert_eq!(points.len(), grad2d.len());
    points
        .iter()
        .zip(grad2d)
        .map(|(p, g)| {
            let fz = camera.focal / p.z;
            V3::new(
                fz * g[0],
                fz * g[1],
                -fz / p.z * (p.x * g[0] + p.y * g[1]),
            )
        })
        .collect()
}

/// Binary mask, row-major, 0/1 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Tight bounding box (x, y, w, h) of the set pixels, if any.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0;
        let mut max_y = 0;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) != 0 {
                    any = true;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        any.then(|| {
            [
                min_x as f64,
                min_y as f64,
                (max_x - min_x + 1) as f64,
                (max_y - min_y + 1) as f64,
            ]
        })
    }

    /// Morphological dilation (radius > 0) or erosion (radius < 0) with a
    /// disk structuring element.
    pub fn morph(&self, radius: i32) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius.unsigned_abs() as i64;
        let dilate = radius > 0;
        let mut out = Mask::zeros(self.width, self.height);
        let r2 = r * r;
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let mut hit = false;
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r2 {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        let inside = nx >= 0
                            && ny >= 0
                            && nx < self.width as i64
                            && ny < self.height as i64;
                        let v = inside && self.get(nx as usize, ny as usize) != 0;
                        if dilate && v {
                            hit = true;
                            break 'scan;
                        }
                        if !dilate && !v {
                            hit = true;
                            break 'scan;
                        }
                    }
                }
                let set = if dilate { hit } else { !hit };
                if set {
                    out.set(x as usize, y as usize, 1);
                }
            }
        }
        out
    }
}

/// Per-pixel occupancy probabilities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Threshold at 0.5 into a binary mask.
    pub fn threshold(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| u8::from(v >= 0.5)).collect(),
        }
    }
}
