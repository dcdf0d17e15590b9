//! Composite differentiable objectives for the three fitting stages:
//! per-instance alignment (pose + optional shape coefficients), the
//! shared species mean deformation, and the joint basis/coefficient
//! problem. Each chains the analytic adjoints of the energy terms, the
//! soft rasterizer, the projection and the posing pipeline.

use crate::energy::{
    arap_energy_grad, edge_energy_grad, keypoint_term, laplacian_energy_grad, ortho_energy_grad,
    silhouette_term, symmetry_energy_grad, EnergyWeights, PosePrior,
};
use crate::error::{Error, Result};
use crate::instance::AnnotatedInstance;
use crate::mesh::{pose_backward, pose_from_rest, Basis, PoseParams, TemplateModel, V3};
use crate::optim::{BlockLayout, Objective};
use crate::par;
use crate::render::{
    project, project_backward, soft_raster, soft_raster_backward, Camera, SoftRasterSettings,
};

fn check_finite(term: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term: term.into() })
    }
}

/// Value (and optionally the rest-shape/pose gradients) of one instance's
/// data terms: robust keypoint reprojection plus, when `sigma` is set,
/// the soft silhouette energy.
pub(crate) struct DataTerm {
    pub kp_value: f64,
    pub msk_value: f64,
    /// d(value)/d(rest shape), 3N flat; empty when value-only.
    pub rest_grad: Vec<f64>,
    pub theta_grad: Vec<f64>,
    pub alpha_grad: Vec<f64>,
    pub gamma_grad: [f64; 3],
    pub kappa_grad: [f64; 2],
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn instance_data_term(
    template: &TemplateModel,
    camera: &Camera,
    instance: &AnnotatedInstance,
    params: &PoseParams,
    shape_flat: &[f64],
    weights: &EnergyWeights,
    gm_sigma: f64,
    sigma: Option<f64>,
    cull_sigmas: f64,
    with_grad: bool,
) -> Result<DataTerm> {
    let n = template.n_vertices();
    let v0: Vec<V3> = template
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| v + V3::new(shape_flat[3 * i], shape_flat[3 * i + 1], shape_flat[3 * i + 2]))
        .collect();
    let (posed, cache) = pose_from_rest(template, params, v0)?;

    let kp3d: Vec<V3> = (0..template.keypoint_map.len())
        .map(|k| template.keypoint_position(k, &posed.vertices))
        .collect();
    let pred2d = project(camera, &kp3d)?;
    let (kp_raw, kp_grad2d) = keypoint_term(&pred2d, &instance.keypoints, gm_sigma)?;
    let kp_value = check_finite("keypoint", weights.w_kp * kp_raw)?;

    let mut vbar = vec![V3::zeros(); n];
    if with_grad {
        let scaled: Vec<[f64; 2]> = kp_grad2d
            .iter()
            .map(|g| [weights.w_kp * g[0], weights.w_kp * g[1]])
            .collect();
        let kp3d_grad = project_backward(camera, &kp3d, &scaled);
        for (k, kp) in template.keypoint_map.iter().enumerate() {
            let share = kp3d_grad[k] / kp.vertices.len() as f64;
            for &v in &kp.vertices {
                vbar[v] += share;
            }
        }
    }

    let mut msk_value = 0.0;
    if let Some(sigma) = sigma {
        let settings = SoftRasterSettings {
            sigma,
            cull_sigmas,
        };
        let verts2d = project(camera, &posed.vertices)?;
        let soft = soft_raster(&verts2d, &template.faces, camera.width, camera.height, &settings)?;
        let (value, obar) =
            silhouette_term(&soft, &instance.mask, weights.w_msk, weights.huber_delta)?;
        msk_value = check_finite("silhouette", value)?;
        if with_grad {
            let grad2d = soft_raster_backward(
                &verts2d,
                &template.faces,
                camera.width,
                camera.height,
                &settings,
                &soft,
                &obar,
            );
            let grad3d = project_backward(camera, &posed.vertices, &grad2d);
            for (vb, g) in vbar.iter_mut().zip(grad3d) {
                *vb += g;
            }
        }
    }

    if !with_grad {
        return Ok(DataTerm {
            kp_value,
            msk_value,
            rest_grad: Vec::new(),
            theta_grad: Vec::new(),
            alpha_grad: Vec::new(),
            gamma_grad: [0.0; 3],
            kappa_grad: [0.0; 2],
        });
    }

    let grads = pose_backward(template, params, &cache, &vbar, None);
    let mut rest_grad = vec![0.0; 3 * n];
    for (i, g) in grads.rest.iter().enumerate() {
        rest_grad[3 * i] = g.x;
        rest_grad[3 * i + 1] = g.y;
        rest_grad[3 * i + 2] = g.z;
    }
    Ok(DataTerm {
        kp_value,
        msk_value,
        rest_grad,
        theta_grad: grads.theta,
        alpha_grad: grads.alpha,
        gamma_grad: grads.gamma,
        kappa_grad: grads.kappa,
    })
}

/// Smoothing bundle of Eq.-6 style terms on a displacement field and the
/// absolute shape it produces. Accumulates weighted gradients w.r.t. the
/// displacement (identical to the shape gradient by linearity).
pub(crate) fn smoothing_term(
    template: &TemplateModel,
    displacement: &[f64],
    weights: &EnergyWeights,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let n = template.n_vertices();
    let v_shape: Vec<f64> = template
        .vertices
        .iter()
        .enumerate()
        .flat_map(|(i, v)| {
            [
                v.x + displacement[3 * i],
                v.y + displacement[3 * i + 1],
                v.z + displacement[3 * i + 2],
            ]
        })
        .collect();
    let mut total = 0.0;
    match grad {
        Some(g) => {
            total += weights.w_edge * edge_energy_grad(displacement, template, weights.w_edge, g)?;
            total +=
                weights.w_lap * laplacian_energy_grad(displacement, template, weights.w_lap, g)?;
            total += weights.w_arap
                * arap_energy_grad(&v_shape, template, weights.w_arap, g)?.energy;
            total +=
                weights.w_sym * symmetry_energy_grad(&v_shape, template, weights.w_sym, g)?;
        }
        None => {
            let mut sink = vec![0.0; 3 * n];
            total += weights.w_edge * edge_energy_grad(displacement, template, 0.0, &mut sink)?;
            total += weights.w_lap * laplacian_energy_grad(displacement, template, 0.0, &mut sink)?;
            total += weights.w_arap * arap_energy_grad(&v_shape, template, 0.0, &mut sink)?.energy;
            total += weights.w_sym * symmetry_energy_grad(&v_shape, template, 0.0, &mut sink)?;
        }
    }
    check_finite("smoothing", total)
}

/// Eq.-1 style per-instance objective over pose (and optionally shape
/// coefficients against a frozen model basis).
pub struct AlignObjective<'a> {
    pub template: &'a TemplateModel,
    pub camera: &'a Camera,
    pub instance: &'a AnnotatedInstance,
    pub prior: &'a PosePrior,
    pub weights: EnergyWeights,
    /// Geman-McClure scale in pixels (already stage-scaled).
    pub gm_sigma: f64,
    /// Soft-rasterizer sigma; None keeps the stage keypoint-only.
    pub sigma: Option<f64>,
    pub cull_sigmas: f64,
    /// Frozen mean shape offset from the template (3N).
    pub mean_offset: &'a [f64],
    /// Frozen shape basis; beta block must have matching length.
    pub basis: Option<&'a Basis>,
    /// Variance-scaled ridge on beta: w_beta * sum beta_c^2 / var_c.
    pub beta_ridge: Option<(&'a [f64], f64)>,
    /// Joint order for packing theta: root first, then the rest.
    pub joint_order: &'a [usize],
}

impl AlignObjective<'_> {
    pub fn layout(&self) -> BlockLayout {
        let j = self.template.n_joints();
        let beta_len = self.basis.map(|b| b.ncols).unwrap_or(0);
        BlockLayout::new(&[
            ("theta_root", 3),
            ("theta_body", 3 * (j - 1)),
            ("alpha", j),
            ("gamma", 3),
            ("kappa", 2),
            ("beta", beta_len),
        ])
    }

    pub fn pack(&self, params: &PoseParams, beta: &[f64]) -> Vec<f64> {
        let j = self.template.n_joints();
        let mut x = Vec::with_capacity(3 * j + j + 5 + beta.len());
        for &joint in self.joint_order {
            x.extend_from_slice(&params.theta[3 * joint..3 * joint + 3]);
        }
        x.extend_from_slice(&params.alpha);
        x.extend_from_slice(&params.gamma);
        x.extend_from_slice(&params.kappa);
        x.extend_from_slice(beta);
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (PoseParams, Vec<f64>) {
        let j = self.template.n_joints();
        let mut theta = vec![0.0; 3 * j];
        for (i, &joint) in self.joint_order.iter().enumerate() {
            theta[3 * joint..3 * joint + 3].copy_from_slice(&x[3 * i..3 * i + 3]);
        }
        let alpha = x[3 * j..4 * j].to_vec();
        let gamma = [x[4 * j], x[4 * j + 1], x[4 * j + 2]];
        let kappa = [x[4 * j + 3], x[4 * j + 4]];
        let beta = x[4 * j + 5..].to_vec();
        (
            PoseParams {
                theta,
                alpha,
                gamma,
                kappa,
            },
            beta,
        )
    }

    fn shape_flat(&self, beta: &[f64]) -> Vec<f64> {
        let mut flat = self.mean_offset.to_vec();
        if let Some(basis) = self.basis {
            basis.accumulate(beta, &mut flat);
        }
        flat
    }

    fn eval_inner(&self, x: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let (params, beta) = self.unpack(x);
        params.validate(self.template.n_joints()).map_err(|_| Error::NonFinite {
            term: "pose domain".into(),
        })?;
        let shape_flat = self.shape_flat(&beta);
        let data = instance_data_term(
            self.template,
            self.camera,
            self.instance,
            &params,
            &shape_flat,
            &self.weights,
            self.gm_sigma,
            self.sigma,
            self.cull_sigmas,
            with_grad,
        )?;
        let prior_raw = self.prior.mahalanobis(&params.theta, &params.alpha);
        let prior_value = check_finite("prior", self.weights.w_prior * prior_raw)?;
        let mut ridge_value = 0.0;
        if let (Some((variances, w_beta)), false) = (self.beta_ridge, beta.is_empty()) {
            for (b, v) in beta.iter().zip(variances) {
                ridge_value += w_beta * b * b / v.max(1e-12);
            }
            ridge_value = check_finite("beta_ridge", ridge_value)?;
        }
        let value = data.kp_value + data.msk_value + prior_value + ridge_value;

        if !with_grad {
            return Ok((value, Vec::new()));
        }

        let j = self.template.n_joints();
        let mut grad = vec![0.0; x.len()];
        let (prior_theta, prior_alpha) = self.prior.mahalanobis_grad(&params.theta, &params.alpha);
        for (i, &joint) in self.joint_order.iter().enumerate() {
            for c in 0..3 {
                grad[3 * i + c] = data.theta_grad[3 * joint + c]
                    + self.weights.w_prior * prior_theta[3 * joint + c];
            }
        }
        for k in 0..j {
            grad[3 * j + k] = data.alpha_grad[k] + self.weights.w_prior * prior_alpha[k];
        }
        grad[4 * j..4 * j + 3].copy_from_slice(&data.gamma_grad);
        grad[4 * j + 3] = data.kappa_grad[0];
        grad[4 * j + 4] = data.kappa_grad[1];
        if let Some(basis) = self.basis {
            let mut beta_grad = basis.project(&data.rest_grad);
            if let Some((variances, w_beta)) = self.beta_ridge {
                for ((g, b), v) in beta_grad.iter_mut().zip(&beta).zip(variances) {
                    *g += 2.0 * w_beta * b / v.max(1e-12);
                }
            }
            grad[4 * j + 5..].copy_from_slice(&beta_grad);
        }
        Ok((value, grad))
    }
}

impl Objective for AlignObjective<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_inner(x, false).map(|(v, _)| v)
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval_inner(x, true)
    }

    fn project(&self, layout: &BlockLayout, x: &mut [f64]) {
        // Wrap axis-angle joints with |w| >= pi; only on active blocks so
        // frozen parameters stay bit-identical.
        let j = self.template.n_joints();
        let wrap = |chunk: &mut [f64]| {
            let mag = (chunk[0].powi(2) + chunk[1].powi(2) + chunk[2].powi(2)).sqrt();
            if mag >= std::f64::consts::PI {
                let turns = (mag / (2.0 * std::f64::consts::PI)).round();
                let s = (mag - 2.0 * std::f64::consts::PI * turns) / mag;
                chunk[0] *= s;
                chunk[1] *= s;
                chunk[2] *= s;
            }
        };
        if layout.is_active("theta_root") {
            wrap(&mut x[0..3]);
        }
        if layout.is_active("theta_body") {
            for i in 1..j {
                wrap(&mut x[3 * i..3 * i + 3]);
            }
        }
        // Keep scale parameters strictly positive when active.
        if layout.is_active("alpha") {
            for a in x[3 * j..4 * j].iter_mut() {
                *a = a.max(0.05);
            }
        }
        if layout.is_active("kappa") {
            x[4 * j + 3] = x[4 * j + 3].max(0.05);
            x[4 * j + 4] = x[4 * j + 4].max(0.05);
        }
    }
}

/// Eq.-5 style objective: shared per-vertex deformation with all poses
/// frozen, data terms summed over instances plus the smoothing bundle.
pub struct MeanObjective<'a> {
    pub template: &'a TemplateModel,
    pub camera: &'a Camera,
    pub instances: &'a [&'a AnnotatedInstance],
    pub poses: &'a [PoseParams],
    pub weights: EnergyWeights,
    pub gm_sigmas: &'a [f64],
    pub sigma: f64,
    pub cull_sigmas: f64,
}

impl Objective for MeanObjective<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_impl(x, false).map(|(v, _)| v)
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval_impl(x, true)
    }
}

impl MeanObjective<'_> {
    fn eval_impl(&self, dv: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let idx: Vec<usize> = (0..self.instances.len()).collect();
        let parts = par::map_collect(&idx, |&i| {
            instance_data_term(
                self.template,
                self.camera,
                self.instances[i],
                &self.poses[i],
                dv,
                &self.weights,
                self.gm_sigmas[i],
                Some(self.sigma),
                self.cull_sigmas,
                with_grad,
            )
        });
        let mut value = 0.0;
        let mut grad = vec![0.0; dv.len()];
        for part in parts {
            let part = part?;
            value += part.kp_value + part.msk_value;
            if with_grad {
                for (g, r) in grad.iter_mut().zip(&part.rest_grad) {
                    *g += r;
                }
            }
        }
        value += smoothing_term(
            self.template,
            dv,
            &self.weights,
            with_grad.then_some(grad.as_mut_slice()),
        )?;
        Ok((value, if with_grad { grad } else { Vec::new() }))
    }
}

/// Eq.-8 style objective: joint basis V and per-instance coefficients,
/// with poses and the species mean frozen. Layout: one `V` block then one
/// `beta{i}` block per instance.
pub struct BasisObjective<'a> {
    pub template: &'a TemplateModel,
    pub camera: &'a Camera,
    pub instances: &'a [&'a AnnotatedInstance],
    pub poses: &'a [PoseParams],
    pub weights: EnergyWeights,
    pub gm_sigmas: &'a [f64],
    pub sigma: f64,
    pub cull_sigmas: f64,
    pub dv: &'a [f64],
    pub k: usize,
}

impl BasisObjective<'_> {
    pub fn layout(&self) -> BlockLayout {
        let n3 = 3 * self.template.n_vertices();
        let mut spec: Vec<(String, usize)> = vec![("V".to_string(), n3 * self.k)];
        for i in 0..self.instances.len() {
            spec.push((format!("beta{i}"), self.k));
        }
        let refs: Vec<(&str, usize)> = spec.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        BlockLayout::new(&refs)
    }

    fn split<'x>(&self, x: &'x [f64]) -> (Basis, Vec<&'x [f64]>) {
        let n3 = 3 * self.template.n_vertices();
        let basis = Basis {
            nrows: n3,
            ncols: self.k,
            data: x[..n3 * self.k].to_vec(),
        };
        let betas = (0..self.instances.len())
            .map(|i| &x[n3 * self.k + i * self.k..n3 * self.k + (i + 1) * self.k])
            .collect();
        (basis, betas)
    }

    fn eval_impl(&self, x: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let n3 = 3 * self.template.n_vertices();
        let (basis, betas) = self.split(x);
        let idx: Vec<usize> = (0..self.instances.len()).collect();
        let parts = par::map_collect(&idx, |&i| -> Result<(f64, Vec<f64>)> {
            let mut disp = self.dv.to_vec();
            basis.accumulate(betas[i], &mut disp);
            let data = instance_data_term(
                self.template,
                self.camera,
                self.instances[i],
                &self.poses[i],
                &disp,
                &self.weights,
                self.gm_sigmas[i],
                Some(self.sigma),
                self.cull_sigmas,
                with_grad,
            )?;
            let mut value = data.kp_value + data.msk_value;
            let mut rest_grad = data.rest_grad;
            value += smoothing_term(
                self.template,
                &disp,
                &self.weights,
                with_grad.then(|| {
                    if rest_grad.is_empty() {
                        rest_grad = vec![0.0; n3];
                    }
                    rest_grad.as_mut_slice()
                }),
            )?;
            Ok((value, rest_grad))
        });

        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];
        for (i, part) in parts.into_iter().enumerate() {
            let (v, rest_grad) = part?;
            value += v;
            if with_grad {
                // V gradient: column k accumulates beta_k * rest_grad.
                for k in 0..self.k {
                    let b = betas[i][k];
                    if b != 0.0 {
                        let col = &mut grad[k * n3..(k + 1) * n3];
                        for (g, r) in col.iter_mut().zip(&rest_grad) {
                            *g += b * r;
                        }
                    }
                }
                let beta_grad = basis.project(&rest_grad);
                let off = n3 * self.k + i * self.k;
                grad[off..off + self.k].copy_from_slice(&beta_grad);
            }
        }
        if self.weights.w_ortho > 0.0 && self.k > 0 {
            if with_grad {
                let norm =
                    ortho_energy_grad(&basis, self.weights.w_ortho, &mut grad[..n3 * self.k])?;
                value += self.weights.w_ortho * norm;
            } else {
                value += self.weights.w_ortho * crate::energy::ortho_energy(&basis)?;
            }
        }
        check_finite("basis objective", value)?;
        Ok((value, if with_grad { grad } else { Vec::new() }))
    }
}

impl Objective for BasisObjective<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_impl(x, false).map(|(v, _)| v)
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval_impl(x, true)
    }
}
