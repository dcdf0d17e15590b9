//! PCA re-learning over reconstructed shapes (Gram-matrix route) and
//! multi-species model assembly.

use crate::error::{Error, Result};
use crate::mesh::{Basis, TemplateModel, V3};
use crate::model::{MultiSpeciesModel, PcaModel, SpeciesModel};

/// PCA of a set of equal-length shape vectors via the n x n Gram matrix
/// (efficient when samples << 3N). Components are orthonormal, variances
/// sorted descending; retained rank is min(requested, samples - 1,
/// numerical rank). Identical shapes yield rank 0 (valid).
pub fn relearn_pca(shapes: &[Vec<f64>], rank_request: usize) -> Result<PcaModel> {
    let n = shapes.len();
    if n < 2 {
        return Err(Error::TooFewInstances { needed: 2, got: n });
    }
    let dim = shapes[0].len();
    for s in shapes {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                field: "shapes",
                expected: dim,
                got: s.len(),
            });
        }
    }
    let mut mean = vec![0.0; dim];
    for s in shapes {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut gram = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    // Numerical rank: eigenvalues below ~1e-10 of the largest carry no
    // reliable direction through the Gram route and are dropped.
    let max_eig = eig.eigenvalues[order[0]].max(0.0);
    let tol = (max_eig * 1e-10).max(1e-18);
    let rank = order
        .iter()
        .take(rank_request.min(n - 1))
        .take_while(|&&k| eig.eigenvalues[k] > tol)
        .count();

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(rank);
    let mut variances = Vec::with_capacity(rank);
    for &k in order.iter().take(rank) {
        let lambda = eig.eigenvalues[k];
        let u = eig.eigenvectors.column(k);
        // component = A^T u / sqrt(lambda) where A has centered rows.
        let inv = 1.0 / lambda.sqrt();
        let mut col = vec![0.0; dim];
        for (i, c) in centered.iter().enumerate() {
            let w = u[i] * inv;
            if w == 0.0 {
                continue;
            }
            for (o, v) in col.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        // One Gram-Schmidt pass against accepted components plus an
        // explicit renormalization squeezes out the residual error of
        // small eigenvalues.
        for prev in &cols {
            let dot: f64 = col.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (c, p) in col.iter_mut().zip(prev) {
                *c -= dot * p;
            }
        }
        let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 0.5 {
            break; // direction lost to roundoff; stop at this rank
        }
        for v in col.iter_mut() {
            *v /= norm;
        }
        // Deterministic sign: largest-|entry| coordinate positive.
        let dom = (0..dim).max_by(|&a, &b| col[a].abs().partial_cmp(&col[b].abs()).unwrap());
        if let Some(d) = dom {
            if col[d] < 0.0 {
                for v in col.iter_mut() {
                    *v = -*v;
                }
            }
        }
        cols.push(col);
        variances.push(lambda / (n as f64 - 1.0));
    }

    let pca = PcaModel {
        mean,
        components: Basis::from_columns(dim, &cols)?,
        variances,
    };
    pca.validate()?;
    Ok(pca)
}

/// Assemble a species model: reconstruct each training shape from
/// (dv, V, beta), then re-learn mean and basis via PCA.
pub fn build_species_model(
    template: &TemplateModel,
    species: &str,
    template_hash: &str,
    dv: Vec<f64>,
    basis: Basis,
    betas: Vec<Vec<f64>>,
    rank_request: usize,
) -> Result<SpeciesModel> {
    let n3 = 3 * template.n_vertices();
    let rest: Vec<f64> = template.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let shapes: Vec<Vec<f64>> = betas
        .iter()
        .map(|b| {
            let mut s = rest.clone();
            for (si, d) in s.iter_mut().zip(&dv) {
                *si += d;
            }
            basis.accumulate(b, &mut s);
            s
        })
        .collect();
    let pca = relearn_pca(&shapes, rank_request)?;
    let _ = n3;
    Ok(SpeciesModel {
        species: species.to_string(),
        template_hash: template_hash.to_string(),
        n_vertices: template.n_vertices(),
        dv,
        basis,
        betas,
        pca,
    })
}

/// Mean-only species model (no individual variation captured).
pub fn mean_only_species_model(
    template: &TemplateModel,
    species: &str,
    template_hash: &str,
    dv: Vec<f64>,
) -> SpeciesModel {
    let mean: Vec<f64> = template
        .vertices
        .iter()
        .flat_map(|v| [v.x, v.y, v.z])
        .zip(&dv)
        .map(|(r, d)| r + d)
        .collect();
    let n3 = mean.len();
    SpeciesModel {
        species: species.to_string(),
        template_hash: template_hash.to_string(),
        n_vertices: template.n_vertices(),
        dv,
        basis: Basis::empty(n3),
        betas: Vec::new(),
        pca: PcaModel {
            mean,
            components: Basis::empty(n3),
            variances: Vec::new(),
        },
    }
}

/// PCA shape space over species mean shapes. With `normalize`, each mean
/// shape is rescaled to unit body length (beak tip to tail tip) first so
/// the space is scale invariant. The rank is clamped to species - 1.
pub fn build_multispecies(
    template: &TemplateModel,
    models: &[&SpeciesModel],
    normalize: bool,
    rank_request: usize,
) -> Result<MultiSpeciesModel> {
    if models.len() < 2 {
        return Err(Error::TooFewInstances {
            needed: 2,
            got: models.len(),
        });
    }
    let hash = models[0].template_hash.clone();
    for m in models {
        if m.template_hash != hash {
            return Err(Error::TemplateHashMismatch {
                expected: hash,
                got: m.template_hash.clone(),
            });
        }
    }
    if rank_request > models.len() - 1 {
        eprintln!(
            "warning: multispecies rank {rank_request} clamped to {} (species - 1)",
            models.len() - 1
        );
    }
    let rest: Vec<f64> = template.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let mut shapes = Vec::with_capacity(models.len());
    for m in models {
        let mut shape: Vec<f64> = rest.iter().zip(&m.dv).map(|(r, d)| r + d).collect();
        if normalize {
            let verts: Vec<V3> = shape
                .chunks(3)
                .map(|c| V3::new(c[0], c[1], c[2]))
                .collect();
            let len = template.body_length(&verts)?;
            if !(len > 1e-9) {
                return Err(Error::Validation(format!(
                    "species `{}` has degenerate body length {len}",
                    m.species
                )));
            }
            for v in shape.iter_mut() {
                *v /= len;
            }
        }
        shapes.push(shape);
    }
    let pca = relearn_pca(&shapes, rank_request.min(models.len() - 1))?;
    let coeffs = shapes.iter().map(|s| pca.project(s)).collect();
    Ok(MultiSpeciesModel {
        template_hash: hash,
        n_vertices: template.n_vertices(),
        species: models.iter().map(|m| m.species.clone()).collect(),
        pca,
        coeffs,
        normalized: normalize,
    })
}
