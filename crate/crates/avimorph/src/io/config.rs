//! Key=value configuration, layered under CLI flag overrides. Unknown
//! keys are rejected so typos surface immediately. Defaults documented
//! in the README; the alignment/shape schedules were tuned on the
//! synthetic recovery suite.

use crate::energy::EnergyWeights;
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // Energy weights and scales.
    pub w_kp: f64,
    pub w_msk: f64,
    pub w_prior: f64,
    pub w_edge: f64,
    pub w_lap: f64,
    pub w_arap: f64,
    pub w_sym: f64,
    pub w_ortho: f64,
    pub gm_sigma: f64,
    pub huber_delta: f64,
    /// Geman-McClure scale as a fraction of the instance bbox diagonal.
    pub gm_frac: f64,

    // Soft rasterizer.
    pub sigma: f64,
    pub cull_sigmas: f64,
    /// Camera focal length = focal_factor * image width.
    pub focal_factor: f64,

    // Alignment schedule (4 stages; sigma and step anneal per stage).
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub stage3_iters: usize,
    pub stage4_iters: usize,
    pub stage5_iters: usize,
    pub stage6_iters: usize,
    pub adam_step: f64,
    pub step_anneal: f64,
    pub sigma_anneal: f64,
    pub tolerance: f64,
    pub grad_clip: f64,

    // Species mean / basis fitting.
    pub mean_iters: usize,
    pub mean_step: f64,
    pub basis_iters: usize,
    pub basis_step: f64,
    pub basis_k: usize,
    pub v_init_scale: f64,
    /// Variance-scaled ridge weight on beta during held-out fitting.
    pub w_beta: f64,

    // Pipeline thresholds and synthesis.
    pub fail_pck: f64,
    pub fail_iou: f64,
    pub pck_threshold: f64,
    pub db_size: usize,
    pub canonical_depth: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        let w = EnergyWeights::default();
        Config {
            w_kp: w.w_kp,
            w_msk: w.w_msk,
            w_prior: w.w_prior,
            w_edge: w.w_edge,
            w_lap: w.w_lap,
            w_arap: w.w_arap,
            w_sym: w.w_sym,
            w_ortho: w.w_ortho,
            gm_sigma: w.gm_sigma,
            huber_delta: w.huber_delta,
            gm_frac: 0.05,
            sigma: 2.0,
            cull_sigmas: 15.0,
            focal_factor: 2.0,
            stage1_iters: 60,
            stage2_iters: 80,
            stage3_iters: 80,
            stage4_iters: 120,
            stage5_iters: 200,
            stage6_iters: 200,
            adam_step: 0.02,
            step_anneal: 0.3,
            sigma_anneal: 0.5,
            tolerance: 1e-6,
            grad_clip: 0.0,
            mean_iters: 300,
            mean_step: 0.003,
            basis_iters: 300,
            basis_step: 0.003,
            basis_k: 4,
            v_init_scale: 1e-3,
            w_beta: 1.0,
            fail_pck: 0.5,
            fail_iou: 0.4,
            pck_threshold: 0.05,
            db_size: 5000,
            canonical_depth: 9.0,
            seed: 0,
            threads: 0,
        }
    }
}

impl Config {
    pub fn weights(&self) -> EnergyWeights {
        EnergyWeights {
            w_kp: self.w_kp,
            w_msk: self.w_msk,
            w_prior: self.w_prior,
            w_edge: self.w_edge,
            w_lap: self.w_lap,
            w_arap: self.w_arap,
            w_sym: self.w_sym,
            w_ortho: self.w_ortho,
            gm_sigma: self.gm_sigma,
            huber_delta: self.huber_delta,
        }
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(v: &str, key: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("config `{key}`: bad float `{v}`")))
        }
        fn u(v: &str, key: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("config `{key}`: bad integer `{v}`")))
        }
        match key {
            "w_kp" => self.w_kp = f(value, key)?,
            "w_msk" => self.w_msk = f(value, key)?,
            "w_prior" => self.w_prior = f(value, key)?,
            "w_edge" => self.w_edge = f(value, key)?,
            "w_lap" => self.w_lap = f(value, key)?,
            "w_arap" => self.w_arap = f(value, key)?,
            "w_sym" => self.w_sym = f(value, key)?,
            "w_ortho" => self.w_ortho = f(value, key)?,
            "gm_sigma" => self.gm_sigma = f(value, key)?,
            "huber_delta" => self.huber_delta = f(value, key)?,
            "gm_frac" => self.gm_frac = f(value, key)?,
            "sigma" => self.sigma = f(value, key)?,
            "cull_sigmas" => self.cull_sigmas = f(value, key)?,
            "focal_factor" => self.focal_factor = f(value, key)?,
            "stage1_iters" => self.stage1_iters = u(value, key)?,
            "stage2_iters" => self.stage2_iters = u(value, key)?,
            "stage3_iters" => self.stage3_iters = u(value, key)?,
            "stage4_iters" => self.stage4_iters = u(value, key)?,
            "stage5_iters" => self.stage5_iters = u(value, key)?,
            "stage6_iters" => self.stage6_iters = u(value, key)?,
            "adam_step" => self.adam_step = f(value, key)?,
            "step_anneal" => self.step_anneal = f(value, key)?,
            "sigma_anneal" => self.sigma_anneal = f(value, key)?,
            "tolerance" => self.tolerance = f(value, key)?,
            "grad_clip" => self.grad_clip = f(value, key)?,
            "mean_iters" => self.mean_iters = u(value, key)?,
            "mean_step" => self.mean_step = f(value, key)?,
            "basis_iters" => self.basis_iters = u(value, key)?,
            "basis_step" => self.basis_step = f(value, key)?,
            "basis_k" => self.basis_k = u(value, key)?,
            "v_init_scale" => self.v_init_scale = f(value, key)?,
            "w_beta" => self.w_beta = f(value, key)?,
            "fail_pck" => self.fail_pck = f(value, key)?,
            "fail_iou" => self.fail_iou = f(value, key)?,
            "pck_threshold" => self.pck_threshold = f(value, key)?,
            "db_size" => self.db_size = u(value, key)?,
            "canonical_depth" => self.canonical_depth = f(value, key)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("config `seed`: bad integer `{value}`")))?
            }
            "threads" => self.threads = u(value, key)?,
            other => {
                return Err(Error::InvalidArgument(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: expected key=value, got `{line}`",
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.apply_text(&super::read_to_string(path)?)?;
        Ok(cfg)
    }
}
