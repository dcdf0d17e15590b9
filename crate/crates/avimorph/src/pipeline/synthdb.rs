//! Synthetic keypoint->parameter database and the nearest-neighbor pose
//! initializer that stands in for a learned regressor.

use crate::energy::PosePrior;
use crate::error::{Error, Result};
use crate::instance::Keypoint2D;
use crate::mesh::{pose_keypoints, PoseParams, TemplateModel};
use crate::render::{project, Camera, Z_NEAR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DbEntry {
    /// Bbox-normalized keypoints (over the full set).
    pub keypoints: Vec<[f64; 2]>,
    pub params: PoseParams,
}

#[derive(Debug, Clone)]
pub struct SynthDb {
    pub entries: Vec<DbEntry>,
}

/// Normalize keypoints by the tight bbox of the selected subset:
/// (kp - min) / max(w, h). Translation- and scale-invariant matching.
fn normalize_subset(kps: &[[f64; 2]], subset: &[usize]) -> Vec<[f64; 2]> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for &i in subset {
        for c in 0..2 {
            min[c] = min[c].min(kps[i][c]);
            max[c] = max[c].max(kps[i][c]);
        }
    }
    let scale = (max[0] - min[0]).max(max[1] - min[1]).max(1e-9);
    subset
        .iter()
        .map(|&i| [(kps[i][0] - min[0]) / scale, (kps[i][1] - min[1]) / scale])
        .collect()
}

/// Sample poses from the prior, project the template keypoints through
/// the camera and store bbox-normalized keypoints with the parameters.
/// Samples that put any keypoint at or behind the near plane are
/// rejected and resampled (bounded retries). Deterministic per seed.
pub fn build_synth_db(
    template: &TemplateModel,
    prior: &PosePrior,
    camera: &Camera,
    n: usize,
    canonical_depth: f64,
    seed: u64,
) -> Result<SynthDb> {
    if n == 0 {
        return Err(Error::InvalidArgument("synth db needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    let all: Vec<usize> = (0..template.keypoint_map.len()).collect();
    for _ in 0..n {
        let mut accepted = None;
        for _retry in 0..100 {
            let (theta, alpha) = prior.sample(&mut rng, 1.0);
            let params = PoseParams {
                theta,
                alpha,
                gamma: [0.0, 0.0, canonical_depth],
                kappa: [1.0, 1.0],
            };
            let kp3d = pose_keypoints(template, &params)?;
            if kp3d.iter().any(|p| p.z <= Z_NEAR) {
                continue;
            }
            let kp2d = project(camera, &kp3d)?;
            accepted = Some(DbEntry {
                keypoints: normalize_subset(&kp2d, &all),
                params,
            });
            break;
        }
        entries.push(accepted.ok_or_else(|| {
            Error::InvalidArgument("synth db sampling kept landing behind the camera".into())
        })?);
    }
    Ok(SynthDb { entries })
}

/// Nearest-neighbor initialization: the database entry minimizing the
/// mean distance over the query's visible, bbox-normalized keypoints.
pub fn init_pose(keypoints: &[Keypoint2D], db: &SynthDb) -> Result<PoseParams> {
    if db.entries.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let visible: Vec<usize> = keypoints
        .iter()
        .enumerate()
        .filter(|(_, k)| k.visible)
        .map(|(i, _)| i)
        .collect();
    if visible.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "init_pose needs >= 4 visible keypoints, got {}",
            visible.len()
        )));
    }
    let kps: Vec<[f64; 2]> = keypoints.iter().map(|k| k.pos()).collect();
    let query = normalize_subset(&kps, &visible);

    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (e, entry) in db.entries.iter().enumerate() {
        if entry.keypoints.len() != keypoints.len() {
            return Err(Error::DimensionMismatch {
                field: "keypoints",
                expected: entry.keypoints.len(),
                got: keypoints.len(),
            });
        }
        // Stored entries are normalized over the full set; renormalizing
        // the visible subset matches the query's normalization because
        // the map is affine.
        let entry_sub = normalize_subset(&entry.keypoints, &visible);
        let mut dist = 0.0;
        for (a, b) in query.iter().zip(&entry_sub) {
            dist += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        }
        dist /= visible.len() as f64;
        if dist < best_dist {
            best_dist = dist;
            best = e;
        }
    }
    Ok(db.entries[best].params.clone())
}
