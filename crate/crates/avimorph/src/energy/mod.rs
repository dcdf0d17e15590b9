//! Objective terms for alignment and shape fitting.
//!
//! Data terms compare keypoint reprojections (robust Geman-McClure) and
//! rendered soft silhouettes (smooth L1) against annotations; a squared
//! Mahalanobis pose prior regularizes articulation; the smoothing terms
//! in `smooth` and `arap` regularize the per-vertex deformation field.
//! Every term exposes value plus analytic gradient pieces that the
//! composite objectives chain together.

mod arap;
mod smooth;

pub use arap::{arap_energy, arap_energy_grad, ArapResult};
pub use smooth::{
    edge_energy, edge_energy_grad, laplacian_energy, laplacian_energy_grad, ortho_energy,
    ortho_energy_grad, symmetry_energy, symmetry_energy_grad,
};

use crate::error::{Error, Result};
use crate::instance::{AnnotatedInstance, Keypoint2D};
use crate::mesh::{pose_mesh, PoseParams, ShapeState, TemplateModel};
use crate::render::{project, render_soft_silhouette, Camera, Mask, SoftMask};
use nalgebra::{Cholesky, DMatrix, DVector};

/// Term weights and robustness scales; all exposed in the config file.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyWeights {
    pub w_kp: f64,
    /// lambda_msk: silhouette term weight.
    pub w_msk: f64,
    pub w_prior: f64,
    pub w_edge: f64,
    pub w_lap: f64,
    pub w_arap: f64,
    pub w_sym: f64,
    pub w_ortho: f64,
    /// Fallback Geman-McClure scale in pixels; alignment derives a
    /// per-instance scale (5% of the bbox diagonal) instead.
    pub gm_sigma: f64,
    /// Smooth-L1 knee for mask residuals.
    pub huber_delta: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            w_kp: 1.0,
            w_msk: 50.0,
            w_prior: 1.0,
            w_edge: 5.0,
            w_lap: 50.0,
            w_arap: 1.0,
            w_sym: 10.0,
            w_ortho: 0.0,
            gm_sigma: 10.0,
            huber_delta: 0.5,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.w_kp, self.w_msk, self.w_prior, self.w_edge, self.w_lap, self.w_arap, self.w_sym,
            self.w_ortho,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("energy weights must be nonnegative".into()));
        }
        if !(self.gm_sigma > 0.0) || !(self.huber_delta > 0.0) {
            return Err(Error::InvalidArgument("gm_sigma and huber_delta must be positive".into()));
        }
        Ok(())
    }
}

/// Geman-McClure penalty: rho(e) = e^2 s^2 / (e^2 + s^2). Saturates at
/// s^2 for gross outliers.
pub fn geman_mcclure(e: f64, sigma: f64) -> f64 {
    let e2 = e * e;
    let s2 = sigma * sigma;
    e2 * s2 / (e2 + s2)
}

/// d rho / d e divided by e; finite at e = 0 (limit 2), so the gradient
/// with respect to the 2D prediction is `gm_weight * (pred - gt)` with no
/// singular normalization.
fn gm_weight(e2: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let denom = e2 + s2;
    2.0 * s2 * s2 / (denom * denom)
}

/// Smooth L1 (Huber-style) with knee `delta`: quadratic inside, linear
/// outside. Returns (value, dvalue/dr).
pub fn smooth_l1(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (r * r / (2.0 * delta), r / delta)
    } else {
        (r.abs() - delta / 2.0, r.signum())
    }
}

/// Gaussian pose prior with precomputed precision matrices.
#[derive(Debug, Clone)]
pub struct PosePrior {
    pub theta_mean: Vec<f64>,
    pub alpha_mean: Vec<f64>,
    theta_prec: DMatrix<f64>,
    alpha_prec: DMatrix<f64>,
    theta_chol_l: DMatrix<f64>,
    alpha_chol_l: DMatrix<f64>,
}

impl PosePrior {
    /// Validates both covariances as SPD (Cholesky must succeed).
    pub fn new(
        theta_mean: Vec<f64>,
        theta_cov: DMatrix<f64>,
        alpha_mean: Vec<f64>,
        alpha_cov: DMatrix<f64>,
    ) -> Result<Self> {
        if theta_cov.nrows() != theta_mean.len() || theta_cov.ncols() != theta_mean.len() {
            return Err(Error::DimensionMismatch {
                field: "theta_cov",
                expected: theta_mean.len(),
                got: theta_cov.nrows(),
            });
        }
        if alpha_cov.nrows() != alpha_mean.len() || alpha_cov.ncols() != alpha_mean.len() {
            return Err(Error::DimensionMismatch {
                field: "alpha_cov",
                expected: alpha_mean.len(),
                got: alpha_cov.nrows(),
            });
        }
        let tc = Cholesky::new(theta_cov.clone())
            .ok_or_else(|| Error::Validation("theta covariance is not positive definite".into()))?;
        let ac = Cholesky::new(alpha_cov.clone())
            .ok_or_else(|| Error::Validation("alpha covariance is not positive definite".into()))?;
        Ok(PosePrior {
            theta_mean,
            alpha_mean,
            theta_prec: tc.inverse(),
            alpha_prec: ac.inverse(),
            theta_chol_l: tc.l(),
            alpha_chol_l: ac.l(),
        })
    }

    pub fn diagonal(theta_mean: Vec<f64>, theta_var: &[f64], alpha_mean: Vec<f64>, alpha_var: &[f64]) -> Result<Self> {
        let tc = DMatrix::from_diagonal(&DVector::from_row_slice(theta_var));
        let ac = DMatrix::from_diagonal(&DVector::from_row_slice(alpha_var));
        PosePrior::new(theta_mean, tc, alpha_mean, ac)
    }

    /// A loose default for the synthetic template: canonical side view
    /// (root yaw pi/2), small articulation spread, alpha near 1.
    pub fn default_for(template: &TemplateModel) -> Self {
        let j = template.n_joints();
        let mut theta_mean = vec![0.0; 3 * j];
        let root = template.root();
        theta_mean[3 * root + 1] = std::f64::consts::FRAC_PI_2;
        let mut theta_var = vec![0.015; 3 * j]; // ~0.12 rad std
        theta_var[3 * root] = 0.04;
        theta_var[3 * root + 1] = 0.25; // yaw std 0.5
        theta_var[3 * root + 2] = 0.04;
        let alpha_mean = vec![1.0; j];
        let alpha_var = vec![0.0016; j]; // std 0.04
        PosePrior::diagonal(theta_mean, &theta_var, alpha_mean, &alpha_var)
            .expect("diagonal prior is always SPD")
    }

    /// Squared Mahalanobis distance of (theta, alpha) from the prior mean.
    pub fn mahalanobis(&self, theta: &[f64], alpha: &[f64]) -> f64 {
        let dt = DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.theta_mean).map(|(a, b)| a - b),
        );
        let da = DVector::from_iterator(
            alpha.len(),
            alpha.iter().zip(&self.alpha_mean).map(|(a, b)| a - b),
        );
        (dt.transpose() * &self.theta_prec * &dt)[(0, 0)]
            + (da.transpose() * &self.alpha_prec * &da)[(0, 0)]
    }

    /// Gradient of `mahalanobis` w.r.t. theta and alpha: 2 P (x - mu).
    pub fn mahalanobis_grad(&self, theta: &[f64], alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dt = DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.theta_mean).map(|(a, b)| a - b),
        );
        let da = DVector::from_iterator(
            alpha.len(),
            alpha.iter().zip(&self.alpha_mean).map(|(a, b)| a - b),
        );
        let gt = 2.0 * &self.theta_prec * dt;
        let ga = 2.0 * &self.alpha_prec * da;
        (gt.as_slice().to_vec(), ga.as_slice().to_vec())
    }

    /// Draw (theta, alpha) from the prior; alpha is clamped to stay
    /// strictly positive.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R, spread: f64) -> (Vec<f64>, Vec<f64>) {
        let zt = DVector::from_iterator(
            self.theta_mean.len(),
            (0..self.theta_mean.len()).map(|_| standard_normal(rng)),
        );
        let za = DVector::from_iterator(
            self.alpha_mean.len(),
            (0..self.alpha_mean.len()).map(|_| standard_normal(rng)),
        );
        let dt = &self.theta_chol_l * zt * spread;
        let da = &self.alpha_chol_l * za * spread;
        let theta: Vec<f64> = self
            .theta_mean
            .iter()
            .zip(dt.iter())
            .map(|(m, d)| m + d)
            .collect();
        let alpha: Vec<f64> = self
            .alpha_mean
            .iter()
            .zip(da.iter())
            .map(|(m, d)| (m + d).max(0.05))
            .collect();
        (theta, alpha)
    }
}

fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Robust keypoint reprojection energy over visible annotated keypoints,
/// on already-projected model keypoints. Returns the value and the
/// gradient with respect to each projected keypoint.
pub fn keypoint_term(
    pred: &[[f64; 2]],
    annotated: &[Keypoint2D],
    gm_sigma: f64,
) -> Result<(f64, Vec<[f64; 2]>)> {
    if pred.len() != annotated.len() {
        return Err(Error::DimensionMismatch {
            field: "keypoints",
            expected: annotated.len(),
            got: pred.len(),
        });
    }
    if !annotated.iter().any(|k| k.visible) {
        return Err(Error::NoVisibleKeypoints);
    }
    let mut value = 0.0;
    let mut grad = vec![[0.0; 2]; pred.len()];
    for (k, gt) in annotated.iter().enumerate() {
        if !gt.visible {
            continue;
        }
        let rx = pred[k][0] - gt.u;
        let ry = pred[k][1] - gt.v;
        let e2 = rx * rx + ry * ry;
        value += geman_mcclure(e2.sqrt(), gm_sigma);
        let w = gm_weight(e2, gm_sigma);
        grad[k] = [w * rx, w * ry];
    }
    Ok((value, grad))
}

/// Silhouette energy on a rendered soft mask: mean smooth-L1 residual
/// against the annotation, weighted by `w_msk`. Returns the value and the
/// per-pixel gradient d(value)/d(O_p) for the rasterizer pull-back.
pub fn silhouette_term(
    rendered: &SoftMask,
    annotated: &Mask,
    w_msk: f64,
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    if rendered.width != annotated.width || rendered.height != annotated.height {
        return Err(Error::DimensionMismatch {
            field: "mask",
            expected: annotated.width * annotated.height,
            got: rendered.width * rendered.height,
        });
    }
    let npix = (rendered.width * rendered.height) as f64;
    let scale = w_msk / npix;
    let mut value = 0.0;
    let mut obar = vec![0.0; rendered.data.len()];
    for (i, (&o, &s)) in rendered.data.iter().zip(&annotated.data).enumerate() {
        let (v, dv) = smooth_l1(o - f64::from(s), delta);
        value += v;
        obar[i] = scale * dv;
    }
    Ok((value * scale, obar))
}

// Spec-level convenience ops: full compositions from parameters to scalars.

/// E_kp: pose, project and compare the template keypoints against an
/// annotated instance.
pub fn keypoint_energy(
    template: &TemplateModel,
    camera: &Camera,
    params: &PoseParams,
    shape: &ShapeState,
    beta: &[f64],
    instance: &AnnotatedInstance,
    gm_sigma: f64,
) -> Result<f64> {
    let posed = pose_mesh(template, params, shape, beta)?;
    let kp3d: Vec<crate::mesh::V3> = (0..template.keypoint_map.len())
        .map(|k| template.keypoint_position(k, &posed.vertices))
        .collect();
    let pred = project(camera, &kp3d)?;
    keypoint_term(&pred, &instance.keypoints, gm_sigma).map(|(v, _)| v)
}

/// E_msk: render the posed mesh at the given soft-rasterizer sigma and
/// compare with the instance mask.
pub fn silhouette_energy(
    template: &TemplateModel,
    camera: &Camera,
    params: &PoseParams,
    shape: &ShapeState,
    beta: &[f64],
    instance: &AnnotatedInstance,
    weights: &EnergyWeights,
    sigma: f64,
) -> Result<f64> {
    let posed = pose_mesh(template, params, shape, beta)?;
    let soft = render_soft_silhouette(&posed.vertices, &template.faces, camera, sigma)?;
    silhouette_term(&soft, &instance.mask, weights.w_msk, weights.huber_delta).map(|(v, _)| v)
}

/// E_prior: w_prior * squared Mahalanobis distance to the pose prior.
pub fn prior_energy(params: &PoseParams, prior: &PosePrior, w_prior: f64) -> f64 {
    w_prior * prior.mahalanobis(&params.theta, &params.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn geman_mcclure_zero_and_saturation() {
        assert_eq!(geman_mcclure(0.0, 10.0), 0.0);
        let sat = geman_mcclure(1e9, 10.0);
        assert!((sat - 100.0).abs() < 1e-4);
    }

    #[test]
    fn keypoint_term_matches_scalar_oracle() {
        // Errors (1, 2, 5) px at gm sigma 10.
        let gt = vec![
            Keypoint2D { u: 10.0, v: 10.0, visible: true },
            Keypoint2D { u: 20.0, v: 10.0, visible: true },
            Keypoint2D { u: 30.0, v: 10.0, visible: true },
        ];
        let pred = vec![[11.0, 10.0], [20.0, 12.0], [30.0, 15.0]];
        let (v, _) = keypoint_term(&pred, &gt, 10.0).unwrap();
        let oracle: f64 = [1.0f64, 2.0, 5.0]
            .iter()
            .map(|e| e * e * 100.0 / (e * e + 100.0))
            .sum();
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn keypoint_term_ignores_invisible_and_errors_on_all_hidden() {
        let gt = vec![
            Keypoint2D { u: 0.0, v: 0.0, visible: false },
            Keypoint2D { u: 5.0, v: 5.0, visible: true },
        ];
        let (v, g) = keypoint_term(&[[100.0, 100.0], [5.0, 5.0]], &gt, 10.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g[0], [0.0, 0.0]);

        let hidden = vec![Keypoint2D { u: 0.0, v: 0.0, visible: false }];
        assert!(matches!(
            keypoint_term(&[[0.0, 0.0]], &hidden, 10.0),
            Err(Error::NoVisibleKeypoints)
        ));
    }

    #[test]
    fn keypoint_term_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let gt: Vec<Keypoint2D> = (0..5)
            .map(|_| Keypoint2D {
                u: rng.gen_range(0.0..32.0),
                v: rng.gen_range(0.0..32.0),
                visible: rng.gen_bool(0.8),
            })
            .collect();
        let gt = {
            let mut g = gt;
            g[0].visible = true;
            g
        };
        let pred: Vec<[f64; 2]> = (0..5)
            .map(|_| [rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0)])
            .collect();
        let (_, grad) = keypoint_term(&pred, &gt, 3.0).unwrap();
        let h = 1e-6;
        for k in 0..5 {
            for c in 0..2 {
                let mut pp = pred.clone();
                let mut pm = pred.clone();
                pp[k][c] += h;
                pm[k][c] -= h;
                let fp = keypoint_term(&pp, &gt, 3.0).unwrap().0;
                let fm = keypoint_term(&pm, &gt, 3.0).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - grad[k][c]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "kp {k} coord {c}"
                );
            }
        }
    }

    #[test]
    fn smooth_l1_closed_forms() {
        let delta = 0.5;
        let (v, _) = smooth_l1(0.3, delta);
        assert!((v - 0.3 * 0.3 / 1.0).abs() < 1e-15);
        let (v, d) = smooth_l1(-2.0, delta);
        assert!((v - (2.0 - 0.25)).abs() < 1e-15);
        assert_eq!(d, -1.0);
    }

    #[test]
    fn silhouette_term_oracle_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = 8;
        let h = 8;
        let soft = SoftMask {
            width: w,
            height: h,
            data: (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        let gt = Mask {
            width: w,
            height: h,
            data: (0..w * h).map(|_| u8::from(rng.gen_bool(0.5))).collect(),
        };
        let (v, _) = silhouette_term(&soft, &gt, 50.0, 0.5).unwrap();
        let mut oracle = 0.0;
        for i in 0..w * h {
            let r: f64 = soft.data[i] - f64::from(gt.data[i]);
            let l = if r.abs() <= 0.5 { r * r } else { r.abs() - 0.25 };
            oracle += l;
        }
        oracle *= 50.0 / 64.0;
        assert!((v - oracle).abs() < 1e-12);

        // Identical -> 0.
        let exact = SoftMask {
            width: w,
            height: h,
            data: gt.data.iter().map(|&s| f64::from(s)).collect(),
        };
        let (v, _) = silhouette_term(&exact, &gt, 50.0, 0.5).unwrap();
        assert_eq!(v, 0.0);

        // Uniform residual within the knee: lambda * r^2 / (2 delta).
        let uniform = SoftMask {
            width: w,
            height: h,
            data: gt.data.iter().map(|&s| f64::from(s) + 0.2).collect(),
        };
        let (v, _) = silhouette_term(&uniform, &gt, 50.0, 0.5).unwrap();
        assert!((v - 50.0 * 0.2 * 0.2 / (2.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn silhouette_term_rejects_size_mismatch() {
        let soft = SoftMask { width: 4, height: 4, data: vec![0.0; 16] };
        let gt = Mask::zeros(5, 4);
        assert!(silhouette_term(&soft, &gt, 1.0, 0.5).is_err());
    }

    #[test]
    fn prior_zero_at_mean_and_identity_cov() {
        let prior = PosePrior::diagonal(
            vec![0.1, -0.2, 0.3],
            &[1.0, 1.0, 1.0],
            vec![1.0],
            &[1.0],
        )
        .unwrap();
        assert!(prior.mahalanobis(&[0.1, -0.2, 0.3], &[1.0]).abs() < 1e-15);
        // Identity covariance, offset e -> |e|^2.
        let v = prior.mahalanobis(&[1.1, -0.2, 0.3], &[1.5]);
        assert!((v - (1.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn prior_matches_dense_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        // Random SPD: A A^T + n I.
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * n as f64;
        let mean: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prior = PosePrior::new(mean.clone(), cov.clone(), vec![1.0], DMatrix::identity(1, 1)).unwrap();
        let v = prior.mahalanobis(&x, &[1.0]);
        // Oracle: solve cov * y = (x - mean), value = (x - mean) . y.
        let d = DVector::from_iterator(n, x.iter().zip(&mean).map(|(a, b)| a - b));
        let y = cov.lu().solve(&d).unwrap();
        let oracle = d.dot(&y);
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
    }

    #[test]
    fn prior_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = PosePrior::diagonal(
            vec![0.0; 6],
            &[0.5, 0.2, 0.9, 1.4, 0.3, 0.8],
            vec![1.0, 1.0],
            &[0.1, 0.4],
        )
        .unwrap();
        let theta: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha: Vec<f64> = (0..2).map(|_| rng.gen_range(0.5..1.5)).collect();
        let (gt, ga) = prior.mahalanobis_grad(&theta, &alpha);
        let h = 1e-6;
        for k in 0..6 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let fd = (prior.mahalanobis(&tp, &alpha) - prior.mahalanobis(&tm, &alpha)) / (2.0 * h);
            assert!((fd - gt[k]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        for k in 0..2 {
            let mut ap = alpha.clone();
            let mut am = alpha.clone();
            ap[k] += h;
            am[k] -= h;
            let fd = (prior.mahalanobis(&theta, &ap) - prior.mahalanobis(&theta, &am)) / (2.0 * h);
            assert!((fd - ga[k]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn rejects_non_spd_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // indefinite
        assert!(PosePrior::new(vec![0.0, 0.0], cov, vec![], DMatrix::zeros(0, 0)).is_err());
    }
}
