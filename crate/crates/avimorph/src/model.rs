//! Learned shape models: per-species (mean offset + blend-shape basis,
//! re-learned as PCA) and the multi-species PCA space over species means.

use crate::error::{Error, Result};
use crate::mesh::Basis;

/// PCA over absolute 3N shape vectors: mean shape, orthonormal
/// components, non-increasing variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Basis,
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn rank(&self) -> usize {
        self.components.ncols
    }

    /// mean + components * coeffs
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        self.components.accumulate(coeffs, &mut out);
        out
    }

    /// components^T (x - mean)
    pub fn project(&self, shape: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = shape.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.components.project(&centered)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.nrows != self.mean.len() {
            return Err(Error::DimensionMismatch {
                field: "pca_components",
                expected: self.mean.len(),
                got: self.components.nrows,
            });
        }
        if self.variances.len() != self.components.ncols {
            return Err(Error::DimensionMismatch {
                field: "pca_variances",
                expected: self.components.ncols,
                got: self.variances.len(),
            });
        }
        for k in 0..self.rank() {
            let nk: f64 = self.components.col(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (nk - 1.0).abs() > 1e-8 {
                return Err(Error::Validation(format!("pca component {k} has norm {nk}")));
            }
            for j in k + 1..self.rank() {
                let dot: f64 = self
                    .components
                    .col(k)
                    .iter()
                    .zip(self.components.col(j))
                    .map(|(a, b)| a * b)
                    .sum();
                if dot.abs() > 1e-8 {
                    return Err(Error::Validation(format!(
                        "pca components {k} and {j} not orthogonal (dot {dot})"
                    )));
                }
            }
        }
        for w in self.variances.windows(2) {
            if w[1] > w[0] + 1e-12 {
                return Err(Error::Validation("pca variances not sorted descending".into()));
            }
        }
        Ok(())
    }
}

/// Species-specific deformable model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesModel {
    pub species: String,
    pub template_hash: String,
    pub n_vertices: usize,
    /// Fitted mean offset from the template (3N).
    pub dv: Vec<f64>,
    /// Fitted blend-shape basis (before PCA re-learning).
    pub basis: Basis,
    /// Per-training-sample coefficients.
    pub betas: Vec<Vec<f64>>,
    /// Re-learned PCA over the reconstructed training shapes.
    pub pca: PcaModel,
}

/// Multi-species PCA shape space over species mean shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSpeciesModel {
    pub template_hash: String,
    pub n_vertices: usize,
    pub species: Vec<String>,
    pub pca: PcaModel,
    /// Per-species coefficients in the PCA space.
    pub coeffs: Vec<Vec<f64>>,
    /// Unit-body-length normalization applied before PCA.
    pub normalized: bool,
}

/// Either model kind, as consumed by held-out fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeModel {
    Species(SpeciesModel),
    Multi(MultiSpeciesModel),
}

impl ShapeModel {
    pub fn pca(&self) -> &PcaModel {
        match self {
            ShapeModel::Species(m) => &m.pca,
            ShapeModel::Multi(m) => &m.pca,
        }
    }

    pub fn template_hash(&self) -> &str {
        match self {
            ShapeModel::Species(m) => &m.template_hash,
            ShapeModel::Multi(m) => &m.template_hash,
        }
    }

    pub fn n_vertices(&self) -> usize {
        match self {
            ShapeModel::Species(m) => m.n_vertices,
            ShapeModel::Multi(m) => m.n_vertices,
        }
    }
}
