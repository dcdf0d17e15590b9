//! Staged per-instance fitting: nearest-neighbor initialization, then
//! coarse-to-fine minimization of the keypoint/silhouette/prior
//! objective over pose (and shape coefficients when a model is given).
//!
//! Stage schedule (defaults; all knobs in the config):
//!   1. root rotation + translation, keypoints only (L-BFGS)
//!   2. full articulation + bone lengths, keypoints only (L-BFGS)
//!   3. everything incl. part scales (+beta), keypoints + silhouette (Adam)
//!   4. same blocks, sigma and step annealed (Adam)
//! The robust keypoint scale anneals alongside (x8, x3, x1.5, x1).

use super::objective::AlignObjective;
use super::synthdb::{init_pose, SynthDb};
use crate::energy::PosePrior;
use crate::error::{Error, Result};
use crate::eval::{iou, pck};
use crate::instance::AnnotatedInstance;
use crate::io::Config;
use crate::mesh::{pose_from_rest, Basis, PoseParams, TemplateModel, V3};
use crate::model::ShapeModel;
use crate::optim::{minimize, Algorithm, OptimConfig, ParamVector, Stage};
use crate::render::{project, rasterize_hard, Camera};

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: PoseParams,
    pub beta: Vec<f64>,
    pub pck05: f64,
    pub iou: f64,
    pub failed: bool,
    pub final_objective: f64,
    pub traces: Vec<(String, Vec<f64>)>,
}

fn pose_blocks(with_beta: bool) -> Vec<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut full = vec!["theta_root", "theta_body", "alpha", "gamma", "kappa"];
    if with_beta {
        full.push("beta");
    }
    vec![
        s(&["gamma", "theta_root"]),
        s(&["gamma", "theta_root", "theta_body", "alpha"]),
        s(&full),
        s(&full),
    ]
}

pub fn default_stages(cfg: &Config, with_beta: bool) -> Vec<Stage> {
    let blocks = pose_blocks(with_beta);
    let a = cfg.sigma_anneal;
    let s = cfg.step_anneal;
    vec![
        Stage {
            active_blocks: blocks[0].clone(),
            iters: cfg.stage1_iters,
            sigma_scale: 0.0,
            step_scale: 1.0,
            gm_scale: 8.0,
            prior_scale: 1.0,
            algorithm: Some(Algorithm::Lbfgs),
        },
        Stage {
            active_blocks: blocks[1].clone(),
            iters: cfg.stage2_iters,
            sigma_scale: 0.0,
            step_scale: 1.0,
            gm_scale: 3.0,
            prior_scale: 1.0,
            algorithm: Some(Algorithm::Lbfgs),
        },
        Stage {
            active_blocks: blocks[2].clone(),
            iters: cfg.stage3_iters,
            sigma_scale: 1.0,
            step_scale: 1.0,
            gm_scale: 1.5,
            prior_scale: 0.3,
            algorithm: Some(Algorithm::Adam),
        },
        Stage {
            active_blocks: blocks[3].clone(),
            iters: cfg.stage4_iters,
            sigma_scale: a,
            step_scale: s,
            gm_scale: 1.0,
            prior_scale: 0.05,
            algorithm: Some(Algorithm::Adam),
        },
        Stage {
            active_blocks: blocks[3].clone(),
            iters: cfg.stage5_iters,
            sigma_scale: a * a,
            step_scale: s * s,
            gm_scale: 1.0,
            prior_scale: 0.01,
            algorithm: Some(Algorithm::Adam),
        },
        Stage {
            active_blocks: blocks[3].clone(),
            iters: cfg.stage6_iters,
            sigma_scale: a * a * a,
            step_scale: s * s * s,
            gm_scale: 1.0,
            prior_scale: 0.01,
            algorithm: Some(Algorithm::Adam),
        },
    ]
}

/// Hard-rasterized IoU and PCK of a fitted pose against the instance's
/// own annotations.
pub fn evaluate_fit(
    template: &TemplateModel,
    camera: &Camera,
    instance: &AnnotatedInstance,
    params: &PoseParams,
    shape_flat: &[f64],
    pck_threshold: f64,
) -> Result<(f64, f64)> {
    let v0: Vec<V3> = template
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| v + V3::new(shape_flat[3 * i], shape_flat[3 * i + 1], shape_flat[3 * i + 2]))
        .collect();
    let (posed, _) = pose_from_rest(template, params, v0)?;
    let mask = rasterize_hard(&posed.vertices, &template.faces, camera)?;
    let iou_val = iou(&mask, &instance.mask)?;
    let kp3d: Vec<V3> = (0..template.keypoint_map.len())
        .map(|k| template.keypoint_position(k, &posed.vertices))
        .collect();
    let pred = project(camera, &kp3d)?;
    let pck_val = pck(&pred, &instance.keypoints, instance.bbox, pck_threshold)?;
    Ok((pck_val, iou_val))
}

struct FitSpec<'a> {
    mean_offset: Vec<f64>,
    basis: Option<&'a Basis>,
    variances: Option<&'a [f64]>,
}

fn run_fit(
    template: &TemplateModel,
    prior: &PosePrior,
    camera: &Camera,
    instance: &AnnotatedInstance,
    db: &SynthDb,
    cfg: &Config,
    spec: FitSpec<'_>,
    stages: &[Stage],
) -> Result<FitOutcome> {
    instance.validate(camera.width, camera.height)?;
    let init = init_pose(&instance.keypoints, db)?;
    let gm_base = cfg.gm_frac * instance.bbox_diagonal();
    let joint_order: Vec<usize> = {
        let root = template.root();
        std::iter::once(root)
            .chain((0..template.n_joints()).filter(|&j| j != root))
            .collect()
    };
    let beta_len = spec.basis.map(|b| b.ncols).unwrap_or(0);
    let mut beta = vec![0.0; beta_len];
    let mut params = init;
    let mut traces = Vec::new();
    let mut failed = false;
    let mut final_objective = f64::NAN;

    for (si, stage) in stages.iter().enumerate() {
        if stage.iters == 0 {
            continue;
        }
        let mut weights = cfg.weights();
        weights.w_prior *= stage.prior_scale;
        let objective = AlignObjective {
            template,
            camera,
            instance,
            prior,
            weights,
            gm_sigma: gm_base * stage.gm_scale,
            sigma: (stage.sigma_scale > 0.0).then(|| cfg.sigma * stage.sigma_scale),
            cull_sigmas: cfg.cull_sigmas,
            mean_offset: &spec.mean_offset,
            basis: spec.basis,
            beta_ridge: spec.variances.map(|v| (v, cfg.w_beta)),
            joint_order: &joint_order,
        };
        let mut layout = objective.layout();
        layout.activate_only(&stage.active_blocks);
        let x = objective.pack(&params, &beta);
        let start = ParamVector::new(layout, x)?;
        let solve = OptimConfig {
            algorithm: stage.algorithm.unwrap_or(Algorithm::Adam),
            max_iters: stage.iters,
            step_size: cfg.adam_step * stage.step_scale,
            tolerance: cfg.tolerance,
            grad_clip: cfg.grad_clip,
            stages: Vec::new(),
        };
        match minimize(&objective, &start, &solve) {
            Ok((result, trace)) => {
                final_objective = *trace.last().unwrap_or(&f64::NAN);
                traces.push((format!("stage{}", si + 1), trace));
                let (p, b) = objective.unpack(&result.data);
                params = p;
                beta = b;
            }
            Err(Error::Diverged { last_params, trace }) => {
                traces.push((format!("stage{}", si + 1), trace));
                let (p, b) = objective.unpack(&last_params);
                params = p;
                beta = b;
                failed = true;
                break;
            }
            Err(other) => return Err(other),
        }
    }
    params.wrap_theta();

    let mut shape_flat = spec.mean_offset.clone();
    if let Some(basis) = spec.basis {
        basis.accumulate(&beta, &mut shape_flat);
    }
    let (pck05, iou_val) =
        match evaluate_fit(template, camera, instance, &params, &shape_flat, cfg.pck_threshold) {
            Ok(v) => v,
            Err(_) => {
                failed = true;
                (0.0, 0.0)
            }
        };
    let failed = failed || pck05 < cfg.fail_pck || iou_val < cfg.fail_iou;
    Ok(FitOutcome {
        params,
        beta,
        pck05,
        iou: iou_val,
        failed,
        final_objective,
        traces,
    })
}

/// Align the raw template to an annotated instance (Eq.-1 style).
pub fn align_instance(
    template: &TemplateModel,
    prior: &PosePrior,
    camera: &Camera,
    instance: &AnnotatedInstance,
    db: &SynthDb,
    cfg: &Config,
) -> Result<FitOutcome> {
    let stages = default_stages(cfg, false);
    run_fit(
        template,
        prior,
        camera,
        instance,
        db,
        cfg,
        FitSpec {
            mean_offset: vec![0.0; 3 * template.n_vertices()],
            basis: None,
            variances: None,
        },
        &stages,
    )
}

/// Fit a learned shape model to an instance over pose and coefficients
/// (model mean and components frozen; variance-scaled ridge on beta).
pub fn fit_model_to_instance(
    template: &TemplateModel,
    prior: &PosePrior,
    camera: &Camera,
    instance: &AnnotatedInstance,
    db: &SynthDb,
    model: &ShapeModel,
    cfg: &Config,
) -> Result<FitOutcome> {
    if model.n_vertices() != template.n_vertices() {
        return Err(Error::DimensionMismatch {
            field: "model",
            expected: template.n_vertices(),
            got: model.n_vertices(),
        });
    }
    let pca = model.pca();
    let mean_offset: Vec<f64> = pca
        .mean
        .iter()
        .enumerate()
        .map(|(i, m)| m - template.vertices[i / 3][i % 3])
        .collect();
    let with_beta = pca.rank() > 0;
    let stages = default_stages(cfg, with_beta);
    run_fit(
        template,
        prior,
        camera,
        instance,
        db,
        cfg,
        FitSpec {
            mean_offset,
            basis: with_beta.then_some(&pca.components),
            variances: with_beta.then_some(pca.variances.as_slice()),
        },
        &stages,
    )
}
