//! Gradient evaluation contract and first-order minimizers.
//!
//! Parameters live in a flat vector carved into named blocks (theta_root,
//! theta_body, alpha, gamma, kappa, dv, V, beta0..) with per-block
//! active/frozen flags. `evaluate` returns analytic value and gradient
//! with frozen slices zeroed; `minimize` runs Adam or an L-BFGS variant
//! with backtracking line search. Everything is deterministic: identical
//! inputs produce bit-identical traces.

mod solvers;

pub use solvers::minimize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub active: bool,
}

/// Disjoint named slices covering a flat parameter vector.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    blocks: Vec<Block>,
    total: usize,
}

impl BlockLayout {
    pub fn new(spec: &[(&str, usize)]) -> Self {
        let mut blocks = Vec::with_capacity(spec.len());
        let mut offset = 0;
        for (name, len) in spec {
            blocks.push(Block {
                name: (*name).to_string(),
                offset,
                len: *len,
                active: true,
            });
            offset += len;
        }
        BlockLayout {
            blocks,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn find(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.find(name).map(|b| b.offset..b.offset + b.len)
    }

    pub fn slice<'a>(&self, name: &str, data: &'a [f64]) -> &'a [f64] {
        let b = self.find(name).unwrap_or_else(|| panic!("no block `{name}`"));
        &data[b.offset..b.offset + b.len]
    }

    pub fn slice_mut<'a>(&self, name: &str, data: &'a mut [f64]) -> &'a mut [f64] {
        let b = self.find(name).unwrap_or_else(|| panic!("no block `{name}`"));
        &mut data[b.offset..b.offset + b.len]
    }

    pub fn is_active(&self, name: &str) -> bool {
        self.find(name).map(|b| b.active).unwrap_or(false)
    }

    pub fn set_active(&mut self, name: &str, active: bool) {
        if let Some(b) = self.blocks.iter_mut().find(|b| b.name == name) {
            b.active = active;
        }
    }

    pub fn set_all(&mut self, active: bool) {
        for b in &mut self.blocks {
            b.active = active;
        }
    }

    /// Activate exactly the named blocks.
    pub fn activate_only(&mut self, names: &[String]) {
        for b in &mut self.blocks {
            b.active = names.iter().any(|n| n == &b.name);
        }
    }

    pub fn zero_frozen(&self, grad: &mut [f64]) {
        for b in &self.blocks {
            if !b.active {
                grad[b.offset..b.offset + b.len].fill(0.0);
            }
        }
    }
}

/// Flat parameter vector plus its block layout.
#[derive(Debug, Clone)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub layout: BlockLayout,
}

impl ParamVector {
    pub fn new(layout: BlockLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                field: "params",
                expected: layout.total_len(),
                got: data.len(),
            });
        }
        Ok(ParamVector { data, layout })
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        self.layout.slice(name, &self.data)
    }
}

/// Differentiable objective with analytic gradients. `project` may snap
/// active parameters back onto their domain after a step (axis-angle
/// wrapping); it must leave frozen blocks untouched.
pub trait Objective {
    fn eval(&self, x: &[f64]) -> Result<f64>;
    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn project(&self, _layout: &BlockLayout, _x: &mut [f64]) {}
}

/// Evaluate value and gradient, zeroing frozen slices and rejecting
/// non-finite results with the offending term's name (composite
/// objectives raise their own named errors first).
pub fn evaluate(obj: &dyn Objective, params: &ParamVector) -> Result<(f64, Vec<f64>)> {
    let (value, mut grad) = obj.eval_grad(&params.data)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: "objective".into(),
        });
    }
    if grad.len() != params.data.len() {
        return Err(Error::DimensionMismatch {
            field: "gradient",
            expected: params.data.len(),
            got: grad.len(),
        });
    }
    params.layout.zero_frozen(&mut grad);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: format!("gradient[{i}]"),
        });
    }
    Ok((value, grad))
}

/// One stage of a staged schedule: which blocks move, for how long, and
/// the annealing scales applied to the soft-rasterizer sigma, the Adam
/// step and the robust keypoint scale. `sigma_scale = 0` turns the
/// silhouette term off for the stage.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Stage {
    pub active_blocks: Vec<String>,
    pub iters: usize,
    pub sigma_scale: f64,
    pub step_scale: f64,
    pub gm_scale: f64,
    /// Pose-prior weight multiplier; annealed down as image evidence
    /// takes over.
    pub prior_scale: f64,
    pub algorithm: Option<Algorithm>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    pub step_size: f64,
    /// Stop when the relative objective decrease over 10 iterations
    /// falls below this.
    pub tolerance: f64,
    /// L2 gradient clip norm; 0 disables.
    pub grad_clip: f64,
    pub stages: Vec<Stage>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            algorithm: Algorithm::Adam,
            max_iters: 200,
            step_size: 0.01,
            tolerance: 1e-8,
            grad_clip: 0.0,
            stages: Vec::new(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument("max_iters and step_size must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with(mut self, algorithm: Algorithm, iters: usize, step: f64) -> Self {
        self.algorithm = algorithm;
        self.max_iters = iters;
        self.step_size = step;
        self
    }
}
