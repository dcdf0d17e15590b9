//! Synthetic species generation: ground-truth deformations from named
//! recipes, poses sampled from the prior, hard-rasterized masks,
//! projected keypoints with a depth-test visibility flag, and optional
//! annotation noise. Everything is deterministic per seed, and the clean
//! ground truth is kept in a sealed record for later scoring.

use crate::energy::PosePrior;
use crate::error::{Error, Result};
use crate::instance::{AnnotatedInstance, Keypoint2D};
use crate::mesh::{pose_from_rest, Basis, PoseParams, TemplateModel, V3};
use crate::render::{project, rasterize_hard, surface_depth_at, Camera};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RECIPE_NAMES: [&str; 4] = ["inflate-belly", "elongate-tail", "crest", "slim"];

/// Spec for one synthetic species collection.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpeciesSpec {
    pub name: String,
    pub seed: u64,
    /// Mean-shape deformation: `+`-separated recipe ids ("inflate-belly",
    /// "elongate-tail", "crest", "slim"), may be empty.
    pub recipe: String,
    /// Scale of the mean deformation, model units.
    pub magnitude: f64,
    /// Rank of the planted individual-variation basis (0 = none).
    pub variation_rank: usize,
    /// Std of the planted coefficients (columns have unit RMS).
    pub variation_magnitude: f64,
    pub count: usize,
    pub pose_prior_scale: f64,
    /// Gaussian keypoint annotation noise, pixels.
    pub keypoint_noise_px: f64,
    /// Mask boundary noise: erode/dilate radius bound, pixels.
    pub mask_noise_px: u32,
    pub image_size: usize,
}

impl SyntheticSpeciesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("synthetic spec needs count >= 1".into()));
        }
        if self.magnitude < 0.0 || self.variation_magnitude < 0.0 || self.keypoint_noise_px < 0.0 {
            return Err(Error::InvalidArgument("synthetic spec magnitudes must be >= 0".into()));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidArgument("synthetic image size must be >= 8".into()));
        }
        for part in recipe_parts(&self.recipe) {
            if !RECIPE_NAMES.contains(&part) {
                return Err(Error::InvalidArgument(format!(
                    "unknown deformation recipe `{part}` (known: {RECIPE_NAMES:?})"
                )));
            }
        }
        Ok(())
    }
}

fn recipe_parts(recipe: &str) -> impl Iterator<Item = &str> {
    recipe
        .split('+')
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Smooth ground-truth displacement field for a named recipe, unit RMS
/// over the nonzero support.
pub fn recipe_field(template: &TemplateModel, name: &str) -> Result<Vec<f64>> {
    let n = template.n_vertices();
    let mut field = vec![0.0; 3 * n];
    let mut set = |i: usize, v: V3| {
        field[3 * i] = v.x;
        field[3 * i + 1] = v.y;
        field[3 * i + 2] = v.z;
    };
    match name {
        "inflate-belly" => {
            let center = V3::new(0.0, -0.25, 0.15);
            for (i, v) in template.vertices.iter().enumerate() {
                let w = (-(v - center).norm_squared() / 0.35).exp();
                // Push away from the spine axis, never across the midline.
                let axis_point = V3::new(0.0, 0.05, v.z);
                let dir = v - axis_point;
                let norm = dir.norm();
                if norm > 1e-6 {
                    set(i, w * dir / norm);
                }
            }
        }
        "elongate-tail" => {
            let dir = V3::new(0.0, 0.06, -1.0).normalize();
            for (i, v) in template.vertices.iter().enumerate() {
                let t = ((-v.z - 0.55) / 0.95).clamp(0.0, 1.0);
                set(i, t * t * dir);
            }
        }
        "crest" => {
            let center = V3::new(0.0, 0.60, 1.00);
            let dir = V3::new(0.0, 1.0, 0.2).normalize();
            for (i, v) in template.vertices.iter().enumerate() {
                let w = (-(v - center).norm_squared() / 0.08).exp();
                set(i, w * dir);
            }
        }
        "slim" => {
            for (i, v) in template.vertices.iter().enumerate() {
                let w = (-(v.z / 0.8) * (v.z / 0.8)).exp();
                set(i, V3::new(-v.x * w, 0.0, 0.0));
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!("unknown deformation recipe `{other}`")))
        }
    }
    let rms = (field.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms > 1e-12 {
        for x in field.iter_mut() {
            *x /= rms;
        }
    }
    Ok(field)
}

fn combined_recipe(template: &TemplateModel, recipe: &str, magnitude: f64) -> Result<Vec<f64>> {
    let n3 = 3 * template.n_vertices();
    let mut dv = vec![0.0; n3];
    for part in recipe_parts(recipe) {
        let f = recipe_field(template, part)?;
        for (d, x) in dv.iter_mut().zip(&f) {
            *d += magnitude * x;
        }
    }
    Ok(dv)
}

/// Sealed ground truth of a generated collection.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub species: String,
    pub dv: Vec<f64>,
    pub factor_cols: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub gamma: Vec<[f64; 3]>,
}

impl GroundTruth {
    pub fn pose(&self, i: usize) -> PoseParams {
        PoseParams {
            theta: self.theta[i].clone(),
            alpha: self.alpha[i].clone(),
            gamma: self.gamma[i],
            kappa: [1.0, 1.0],
        }
    }
}

pub struct SyntheticCollection {
    pub camera: Camera,
    pub instances: Vec<AnnotatedInstance>,
    pub ground_truth: GroundTruth,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate an annotated collection from a spec. Rejection rules: a
/// sampled pose is retried (bounded) when its mask is empty, its bbox
/// touches the image border, or fewer than 4 keypoints stay visible.
pub fn generate_synthetic_collection(
    template: &TemplateModel,
    prior: &PosePrior,
    spec: &SyntheticSpeciesSpec,
    focal_factor: f64,
    canonical_depth: f64,
) -> Result<SyntheticCollection> {
    spec.validate()?;
    let mut camera = Camera::default_for(spec.image_size, spec.image_size);
    camera.focal = focal_factor * spec.image_size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let dv = combined_recipe(template, &spec.recipe, spec.magnitude)?;
    let n3 = 3 * template.n_vertices();
    let factor_cols: Vec<Vec<f64>> = RECIPE_NAMES
        .iter()
        .take(spec.variation_rank)
        .map(|name| recipe_field(template, name))
        .collect::<Result<_>>()?;
    let factors = Basis::from_columns(n3, &factor_cols)?;
    let body_len = template.body_length(&template.vertices)?;

    let mut instances = Vec::with_capacity(spec.count);
    let mut gt = GroundTruth {
        species: spec.name.clone(),
        dv: dv.clone(),
        factor_cols: factor_cols.clone(),
        betas: Vec::new(),
        theta: Vec::new(),
        alpha: Vec::new(),
        gamma: Vec::new(),
    };

    for idx in 0..spec.count {
        let mut made = None;
        for _retry in 0..50 {
            let beta: Vec<f64> = (0..spec.variation_rank)
                .map(|_| spec.variation_magnitude * standard_normal(&mut rng))
                .collect();
            let (theta, alpha) = prior.sample(&mut rng, spec.pose_prior_scale);
            let gamma = [
                0.35 * standard_normal(&mut rng).clamp(-2.0, 2.0) * 0.5,
                0.35 * standard_normal(&mut rng).clamp(-2.0, 2.0) * 0.5,
                canonical_depth + 0.5 * standard_normal(&mut rng).clamp(-2.0, 2.0) * 0.5,
            ];
            let params = PoseParams {
                theta,
                alpha,
                gamma,
                kappa: [1.0, 1.0],
            };
            let mut shape = dv.clone();
            factors.accumulate(&beta, &mut shape);
            let v0: Vec<V3> = template
                .vertices
                .iter()
                .enumerate()
                .map(|(i, v)| v + V3::new(shape[3 * i], shape[3 * i + 1], shape[3 * i + 2]))
                .collect();
            let Ok((posed, _)) = pose_from_rest(template, &params, v0) else {
                continue;
            };
            if posed.vertices.iter().any(|p| p.z <= crate::render::Z_NEAR) {
                continue;
            }
            let verts2d = project(&camera, &posed.vertices)?;
            let mask = rasterize_hard(&posed.vertices, &template.faces, &camera)?;
            let Some(bbox) = mask.bbox() else {
                continue;
            };
            if bbox[0] < 1.0
                || bbox[1] < 1.0
                || bbox[0] + bbox[2] > (spec.image_size - 1) as f64
                || bbox[1] + bbox[3] > (spec.image_size - 1) as f64
            {
                continue;
            }

            // Keypoints: project, depth-test for self-occlusion, add noise.
            let kp3d: Vec<V3> = (0..template.keypoint_map.len())
                .map(|k| template.keypoint_position(k, &posed.vertices))
                .collect();
            let kp2d = project(&camera, &kp3d)?;
            let tolerance = 0.01 * body_len;
            let mut keypoints = Vec::with_capacity(kp2d.len());
            for (k, p) in kp2d.iter().enumerate() {
                let depth = surface_depth_at(&posed.vertices, &verts2d, &template.faces, *p);
                let mut visible = match depth {
                    Some(z) => kp3d[k].z <= z + tolerance,
                    None => true,
                };
                let u = p[0] + spec.keypoint_noise_px * standard_normal(&mut rng);
                let v = p[1] + spec.keypoint_noise_px * standard_normal(&mut rng);
                if u < 0.0 || v < 0.0 || u > spec.image_size as f64 || v > spec.image_size as f64 {
                    visible = false;
                }
                keypoints.push(Keypoint2D { u, v, visible });
            }
            if keypoints.iter().filter(|k| k.visible).count() < 4 {
                continue;
            }

            let noisy_mask = if spec.mask_noise_px > 0 {
                let radius = rng.gen_range(1..=spec.mask_noise_px) as i32;
                let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
                let m = mask.morph(sign * radius);
                if m.count_ones() == 0 {
                    continue;
                }
                m
            } else {
                mask
            };
            let bbox = noisy_mask.bbox().unwrap_or(bbox);

            made = Some((
                AnnotatedInstance {
                    id: format!("{}_{idx:03}", spec.name),
                    species: spec.name.clone(),
                    keypoints,
                    mask: noisy_mask,
                    bbox,
                },
                beta,
                params,
            ));
            break;
        }
        let (inst, beta, params) = made.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "failed to sample a usable pose for instance {idx} after 50 retries"
            ))
        })?;
        gt.betas.push(beta);
        gt.theta.push(params.theta);
        gt.alpha.push(params.alpha);
        gt.gamma.push(params.gamma);
        instances.push(inst);
    }

    Ok(SyntheticCollection {
        camera,
        instances,
        ground_truth: gt,
    })
}
