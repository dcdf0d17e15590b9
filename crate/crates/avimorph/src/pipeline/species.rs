//! Species-level shape capture: the shared mean deformation (poses
//! frozen) and the joint blend-shape basis / coefficient fit on top of it.

use super::align::evaluate_fit;
use super::objective::{BasisObjective, MeanObjective};
use crate::error::{Error, Result};
use crate::instance::AnnotatedInstance;
use crate::io::Config;
use crate::mesh::{Basis, PoseParams, TemplateModel};
use crate::optim::{minimize, Algorithm, BlockLayout, OptimConfig, ParamVector};
use crate::render::Camera;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct MeanFitResult {
    pub dv: Vec<f64>,
    pub iou_before: Vec<f64>,
    pub iou_after: Vec<f64>,
    pub traces: Vec<(String, Vec<f64>)>,
}

fn gm_sigmas(instances: &[&AnnotatedInstance], cfg: &Config) -> Vec<f64> {
    instances
        .iter()
        .map(|i| cfg.gm_frac * i.bbox_diagonal())
        .collect()
}

fn mean_ious(
    template: &TemplateModel,
    camera: &Camera,
    instances: &[&AnnotatedInstance],
    poses: &[PoseParams],
    shape_per_instance: &dyn Fn(usize) -> Vec<f64>,
    cfg: &Config,
) -> Vec<f64> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            evaluate_fit(template, camera, inst, &poses[i], &shape_per_instance(i), cfg.pck_threshold)
                .map(|(_, iou)| iou)
                .unwrap_or(0.0)
        })
        .collect()
}

/// Minimize the summed data terms plus smoothing over the shared
/// deformation dv, with every instance's pose frozen. Two annealed
/// sigma stages.
pub fn fit_species_mean(
    template: &TemplateModel,
    camera: &Camera,
    instances: &[&AnnotatedInstance],
    poses: &[PoseParams],
    cfg: &Config,
) -> Result<MeanFitResult> {
    if instances.len() < 2 {
        return Err(Error::TooFewInstances {
            needed: 2,
            got: instances.len(),
        });
    }
    if poses.len() != instances.len() {
        return Err(Error::DimensionMismatch {
            field: "poses",
            expected: instances.len(),
            got: poses.len(),
        });
    }
    let n3 = 3 * template.n_vertices();
    let gm = gm_sigmas(instances, cfg);
    let zero = vec![0.0; n3];
    let iou_before = mean_ious(template, camera, instances, poses, &|_| zero.clone(), cfg);

    let mut dv = vec![0.0; n3];
    let mut traces = Vec::new();
    let stage_sigmas = [cfg.sigma * cfg.sigma_anneal, cfg.sigma * cfg.sigma_anneal * cfg.sigma_anneal];
    for (si, &sigma) in stage_sigmas.iter().enumerate() {
        let objective = MeanObjective {
            template,
            camera,
            instances,
            poses,
            weights: cfg.weights(),
            gm_sigmas: &gm,
            sigma,
            cull_sigmas: cfg.cull_sigmas,
        };
        let layout = BlockLayout::new(&[("dv", n3)]);
        let start = ParamVector::new(layout, dv.clone())?;
        let solve = OptimConfig {
            algorithm: Algorithm::Adam,
            max_iters: (cfg.mean_iters / 2).max(1),
            step_size: cfg.mean_step * cfg.step_anneal.powi(si as i32),
            tolerance: cfg.tolerance,
            grad_clip: cfg.grad_clip,
            stages: Vec::new(),
        };
        let (result, trace) = minimize(&objective, &start, &solve)?;
        dv = result.data;
        traces.push((format!("mean_sigma{sigma}"), trace));
    }

    let dv_ref = dv.clone();
    let iou_after = mean_ious(template, camera, instances, poses, &|_| dv_ref.clone(), cfg);
    Ok(MeanFitResult {
        dv,
        iou_before,
        iou_after,
        traces,
    })
}

#[derive(Debug, Clone)]
pub struct BasisFitResult {
    pub basis: Basis,
    pub betas: Vec<Vec<f64>>,
    pub iou_after: Vec<f64>,
    pub traces: Vec<(String, Vec<f64>)>,
}

/// Jointly minimize over the basis V and all per-instance coefficients,
/// poses and dv frozen. V starts at seeded small Gaussian values (zero
/// init would stall the bilinear problem), beta at zero.
pub fn fit_individuals(
    template: &TemplateModel,
    camera: &Camera,
    instances: &[&AnnotatedInstance],
    poses: &[PoseParams],
    dv: &[f64],
    k: usize,
    cfg: &Config,
    seed: u64,
) -> Result<BasisFitResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("fit_individuals needs K >= 1".into()));
    }
    if k >= instances.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} must be smaller than the instance count {}",
            instances.len()
        )));
    }
    let n3 = 3 * template.n_vertices();
    if dv.len() != n3 {
        return Err(Error::DimensionMismatch {
            field: "dv",
            expected: n3,
            got: dv.len(),
        });
    }
    let gm = gm_sigmas(instances, cfg);
    let body_len = template.body_length(&template.vertices).unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = cfg.v_init_scale * body_len;
    let mut x = vec![0.0; n3 * k + k * instances.len()];
    for v in x[..n3 * k].iter_mut() {
        *v = scale * rng.gen_range(-1.0..1.0);
    }

    let mut traces = Vec::new();
    let stage_sigmas = [cfg.sigma * cfg.sigma_anneal, cfg.sigma * cfg.sigma_anneal * cfg.sigma_anneal];
    for (si, &sigma) in stage_sigmas.iter().enumerate() {
        let objective = BasisObjective {
            template,
            camera,
            instances,
            poses,
            weights: cfg.weights(),
            gm_sigmas: &gm,
            sigma,
            cull_sigmas: cfg.cull_sigmas,
            dv,
            k,
        };
        let layout = objective.layout();
        let start = ParamVector::new(layout, x.clone())?;
        let solve = OptimConfig {
            algorithm: Algorithm::Adam,
            max_iters: (cfg.basis_iters / 2).max(1),
            step_size: cfg.basis_step * cfg.step_anneal.powi(si as i32),
            tolerance: cfg.tolerance,
            grad_clip: cfg.grad_clip,
            stages: Vec::new(),
        };
        let (result, trace) = minimize(&objective, &start, &solve)?;
        x = result.data;
        traces.push((format!("basis_sigma{sigma}"), trace));
    }

    let basis = Basis {
        nrows: n3,
        ncols: k,
        data: x[..n3 * k].to_vec(),
    };
    let betas: Vec<Vec<f64>> = (0..instances.len())
        .map(|i| x[n3 * k + i * k..n3 * k + (i + 1) * k].to_vec())
        .collect();
    let iou_after = {
        let shape = |i: usize| {
            let mut s = dv.to_vec();
            basis.accumulate(&betas[i], &mut s);
            s
        };
        mean_ious(template, camera, instances, poses, &shape, cfg)
    };
    Ok(BasisFitResult {
        basis,
        betas,
        iou_after,
        traces,
    })
}
