//! Evaluation metrics (PCK, IoU) and the deterministic 2D shape-space
//! embedding.

use crate::error::{Error, Result};
use crate::instance::Keypoint2D;
use crate::phylo::TraitMatrix;
use crate::render::Mask;
use nalgebra::{DMatrix, DVector};

/// Percentage of correct keypoints: fraction of visible ground-truth
/// keypoints whose prediction lands within
/// `threshold_fraction * max(bbox_w, bbox_h)` (inclusive).
pub fn pck(
    pred: &[[f64; 2]],
    gt: &[Keypoint2D],
    bbox: [f64; 4],
    threshold_fraction: f64,
) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            field: "keypoints",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if !(bbox[2] > 0.0 && bbox[3] > 0.0) {
        return Err(Error::InvalidArgument("pck needs a nonempty bounding box".into()));
    }
    let threshold = threshold_fraction * bbox[2].max(bbox[3]);
    let mut visible = 0usize;
    let mut correct = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if !g.visible {
            continue;
        }
        visible += 1;
        let d = ((p[0] - g.u).powi(2) + (p[1] - g.v).powi(2)).sqrt();
        if d <= threshold {
            correct += 1;
        }
    }
    if visible == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    Ok(correct as f64 / visible as f64)
}

/// Intersection over union of two binary masks; 1.0 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            field: "mask",
            expected: a.width * a.height,
            got: b.width * b.height,
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Deterministic top-2 PCA projection of a trait matrix; output is
/// centered, with each axis sign fixed by its largest-magnitude loading.
pub fn embed_2d(traits: &TraitMatrix) -> Result<Vec<[f64; 2]>> {
    let s = traits.species.len();
    if s < 2 {
        return Err(Error::TooFewInstances { needed: 2, got: s });
    }
    let d = traits.dims();
    let mut mean = vec![0.0; d];
    for row in &traits.data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= s as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for row in &traits.data {
        let c = DVector::from_iterator(d, row.iter().zip(&mean).map(|(v, m)| v - m));
        cov += &c * c.transpose();
    }
    cov /= (s as f64 - 1.0).max(1.0);

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut axes = Vec::with_capacity(2);
    for k in 0..2.min(d) {
        let col = eig.eigenvectors.column(order[k]);
        let mut axis: Vec<f64> = col.iter().copied().collect();
        // Sign convention: largest-|loading| coefficient positive.
        let dom = (0..d).max_by(|&i, &j| axis[i].abs().partial_cmp(&axis[j].abs()).unwrap());
        if let Some(dom) = dom {
            if axis[dom] < 0.0 {
                for a in axis.iter_mut() {
                    *a = -*a;
                }
            }
        }
        axes.push(axis);
    }
    Ok(traits
        .data
        .iter()
        .map(|row| {
            let mut out = [0.0; 2];
            for (k, axis) in axes.iter().enumerate() {
                out[k] = row
                    .iter()
                    .zip(&mean)
                    .zip(axis)
                    .map(|((v, m), a)| (v - m) * a)
                    .sum();
            }
            out
        })
        .collect())
}
