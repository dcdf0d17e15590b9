//! Annotated training instances: 2D keypoints with visibility, a binary
//! silhouette mask and a bounding box.

use crate::error::{Error, Result};
use crate::render::Mask;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

impl Keypoint2D {
    pub fn pos(&self) -> [f64; 2] {
        [self.u, self.v]
    }
}

#[derive(Debug, Clone)]
pub struct AnnotatedInstance {
    pub id: String,
    pub species: String,
    pub keypoints: Vec<Keypoint2D>,
    pub mask: Mask,
    /// (x, y, w, h) in pixels.
    pub bbox: [f64; 4],
}

impl AnnotatedInstance {
    pub fn validate(&self, image_width: usize, image_height: usize) -> Result<()> {
        if self.mask.width != image_width || self.mask.height != image_height {
            return Err(Error::Validation(format!(
                "instance `{}`: mask is {}x{}, image is {image_width}x{image_height}",
                self.id, self.mask.width, self.mask.height
            )));
        }
        if !(self.bbox[2] > 0.0 && self.bbox[3] > 0.0) {
            return Err(Error::Validation(format!("instance `{}`: empty bounding box", self.id)));
        }
        for (k, kp) in self.keypoints.iter().enumerate() {
            if kp.visible
                && !(kp.u >= 0.0
                    && kp.v >= 0.0
                    && kp.u <= image_width as f64
                    && kp.v <= image_height as f64)
            {
                return Err(Error::Validation(format!(
                    "instance `{}`: visible keypoint {k} at ({}, {}) outside image bounds",
                    self.id, kp.u, kp.v
                )));
            }
        }
        Ok(())
    }

    pub fn n_visible(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visible).count()
    }

    /// Bounding-box diagonal; the robust keypoint scale is 5% of this.
    pub fn bbox_diagonal(&self) -> f64 {
        (self.bbox[2] * self.bbox[2] + self.bbox[3] * self.bbox[3]).sqrt()
    }
}
