//! Deformation smoothing terms: edge, Laplacian, symmetry, orthogonality.
//!
//! All operate on flat 3N vectors (dv or absolute vertex positions) and
//! accumulate weighted gradients into a caller buffer.

use crate::error::{Error, Result};
use crate::mesh::{Basis, TemplateModel, V3};

fn v3_at(flat: &[f64], i: usize) -> V3 {
    V3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2])
}

fn add_at(flat: &mut [f64], i: usize, v: V3) {
    flat[3 * i] += v.x;
    flat[3 * i + 1] += v.y;
    flat[3 * i + 2] += v.z;
}

fn check_len(field: &'static str, flat: &[f64], n: usize) -> Result<()> {
    if flat.len() != 3 * n {
        return Err(Error::DimensionMismatch {
            field,
            expected: 3 * n,
            got: flat.len(),
        });
    }
    Ok(())
}

/// E_edge = sum over mesh edges of |dv_p - dv_q|_2 (L2 norm, not squared).
pub fn edge_energy(dv: &[f64], template: &TemplateModel) -> Result<f64> {
    check_len("dv", dv, template.n_vertices())?;
    Ok(template
        .edges
        .iter()
        .map(|&(p, q)| (v3_at(dv, p) - v3_at(dv, q)).norm())
        .sum())
}

/// Accumulates `weight * d(E_edge)/d(dv)`; returns the energy. Zero-length
/// differences get a zero subgradient.
pub fn edge_energy_grad(dv: &[f64], template: &TemplateModel, weight: f64, grad: &mut [f64]) -> Result<f64> {
    check_len("dv", dv, template.n_vertices())?;
    let mut total = 0.0;
    for &(p, q) in &template.edges {
        let d = v3_at(dv, p) - v3_at(dv, q);
        let norm = d.norm();
        total += norm;
        if norm > 1e-12 {
            let g = weight / norm * d;
            add_at(grad, p, g);
            add_at(grad, q, -g);
        }
    }
    Ok(total)
}

/// E_lap = |L dv|^2 with the uniform graph Laplacian
/// (L dv)_p = dv_p - mean of neighbor dv. Isolated vertices contribute 0.
pub fn laplacian_energy(dv: &[f64], template: &TemplateModel) -> Result<f64> {
    check_len("dv", dv, template.n_vertices())?;
    Ok(laplacian_rows(dv, template).iter().map(|r| r.norm_squared()).sum())
}

fn laplacian_rows(dv: &[f64], template: &TemplateModel) -> Vec<V3> {
    (0..template.n_vertices())
        .map(|p| {
            let nbrs = &template.neighbors[p];
            if nbrs.is_empty() {
                return V3::zeros();
            }
            let mut mean = V3::zeros();
            for &q in nbrs {
                mean += v3_at(dv, q);
            }
            v3_at(dv, p) - mean / nbrs.len() as f64
        })
        .collect()
}

/// Accumulates `weight * d(E_lap)/d(dv) = weight * 2 L^T L dv`.
pub fn laplacian_energy_grad(
    dv: &[f64],
    template: &TemplateModel,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_len("dv", dv, template.n_vertices())?;
    let rows = laplacian_rows(dv, template);
    let energy = rows.iter().map(|r| r.norm_squared()).sum();
    for p in 0..template.n_vertices() {
        if template.neighbors[p].is_empty() {
            continue;
        }
        add_at(grad, p, 2.0 * weight * rows[p]);
        let scale = 2.0 * weight / template.neighbors[p].len() as f64;
        for &q in &template.neighbors[p] {
            add_at(grad, q, -scale * rows[p]);
        }
    }
    Ok(energy)
}

/// E_sym over the template's sagittal pairs on absolute vertex positions:
/// off-midline pairs penalize |v_p - mirror(v_q)|^2, midline self-pairs
/// penalize 2 x_p^2.
pub fn symmetry_energy(v_shape: &[f64], template: &TemplateModel) -> Result<f64> {
    check_len("v_shape", v_shape, template.n_vertices())?;
    let mut total = 0.0;
    for &(p, q) in &template.symmetry_pairs {
        if p == q {
            let x = v_shape[3 * p];
            total += 2.0 * x * x;
        } else {
            let d = v3_at(v_shape, p) - TemplateModel::mirror_point(&v3_at(v_shape, q));
            total += d.norm_squared();
        }
    }
    Ok(total)
}

pub fn symmetry_energy_grad(
    v_shape: &[f64],
    template: &TemplateModel,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_len("v_shape", v_shape, template.n_vertices())?;
    let mut total = 0.0;
    for &(p, q) in &template.symmetry_pairs {
        if p == q {
            let x = v_shape[3 * p];
            total += 2.0 * x * x;
            grad[3 * p] += weight * 4.0 * x;
        } else {
            let d = v3_at(v_shape, p) - TemplateModel::mirror_point(&v3_at(v_shape, q));
            total += d.norm_squared();
            add_at(grad, p, 2.0 * weight * d);
            add_at(grad, q, -2.0 * weight * TemplateModel::mirror_point(&d));
        }
    }
    Ok(total)
}

/// Soft orthogonality penalty |V^T V - I|_F (Frobenius norm, not squared).
pub fn ortho_energy(basis: &Basis) -> Result<f64> {
    if basis.ncols == 0 {
        return Err(Error::InvalidArgument("ortho_energy needs K >= 1".into()));
    }
    Ok(gram_residual(basis).1)
}

fn gram_residual(basis: &Basis) -> (Vec<f64>, f64) {
    let k = basis.ncols;
    let mut g = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let dot: f64 = basis.col(a).iter().zip(basis.col(b)).map(|(x, y)| x * y).sum();
            let r = dot - if a == b { 1.0 } else { 0.0 };
            g[a * k + b] = r;
            g[b * k + a] = r;
        }
    }
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    (g, norm)
}

/// Accumulates `weight * d|V^T V - I|_F / dV = weight * 2 V G / |G|_F`
/// into a flat column-major gradient buffer of the basis shape.
pub fn ortho_energy_grad(basis: &Basis, weight: f64, grad: &mut [f64]) -> Result<f64> {
    if basis.ncols == 0 {
        return Err(Error::InvalidArgument("ortho_energy needs K >= 1".into()));
    }
    debug_assert_eq!(grad.len(), basis.data.len());
    let (g, norm) = gram_residual(basis);
    if norm < 1e-12 {
        return Ok(norm);
    }
    let k = basis.ncols;
    let scale = 2.0 * weight / norm;
    for col in 0..k {
        for other in 0..k {
            let gv = g[other * k + col];
            if gv == 0.0 {
                continue;
            }
            let src = basis.col(other);
            let dst = &mut grad[col * basis.nrows..(col + 1) * basis.nrows];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * gv * s;
            }
        }
    }
    Ok(norm)
}
