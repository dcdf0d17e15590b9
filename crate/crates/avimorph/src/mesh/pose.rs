//! Posing pipeline: shape deformation, part-length scaling, joint
//! re-derivation, bone scaling, forward kinematics and linear blend
//! skinning — plus the reverse-mode adjoint of the whole chain.
//!
//! Forward order:
//!
//! ```text
//! v0 = v_rest + dv + V b            (apply_shape)
//! v1 = scale(v0, beak, kappa0)      (about the group anchor, along its axis)
//! v2 = scale(v1, tail, kappa1)
//! p_j = skinning-weighted centroid of v2 over joint j's support
//! FK: t_root = p_root, Rg_root = R(theta_root)
//!     t_j = t_par + Rg_par * alpha_j (p_j - p_par)
//!     Rg_j = Rg_par * R(theta_j)
//! out_i = sum_j w_ij (Rg_j (v2_i - p_j) + t_j) + gamma
//! ```
//!
//! The backward pass consumes d(loss)/d(out) and produces gradients for
//! theta, alpha, gamma, kappa and the rest-pose input v0, from which the
//! dv / V / beta gradients follow by linearity.

use super::{weighted_centroids, ResolvedGroup, ShapeState, TemplateModel, M3, V3};
use crate::error::{Error, Result};
use crate::mesh::PoseParams;

/// Posed rest-shape mesh vertices plus the posed joint positions.
#[derive(Debug, Clone)]
pub struct PosedMesh {
    pub vertices: Vec<V3>,
    pub joints: Vec<V3>,
}

/// v_rest + dv + V*beta. The template is never modified.
pub fn apply_shape(template: &TemplateModel, shape: &ShapeState, beta: &[f64]) -> Result<Vec<V3>> {
    let n = template.n_vertices();
    shape.validate(n)?;
    if beta.len() != shape.basis.ncols {
        return Err(Error::DimensionMismatch {
            field: "beta",
            expected: shape.basis.ncols,
            got: beta.len(),
        });
    }
    let mut flat = shape.dv.clone();
    shape.basis.accumulate(beta, &mut flat);
    Ok(template
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| v + V3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]))
        .collect())
}

/// Scale a part group by `scale` along its principal axis about its
/// anchor. Off-group vertices are returned bit-identical.
pub fn scale_part(vertices: &[V3], group: &ResolvedGroup, scale: f64) -> Result<Vec<V3>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("part scale must be positive, got {scale}")));
    }
    let mut out = vertices.to_vec();
    let a = group.axis;
    for &i in &group.indices {
        let d = a.dot(&(vertices[i] - group.anchor));
        out[i] += (scale - 1.0) * d * a;
    }
    Ok(out)
}

fn scale_part_in_place(vertices: &mut [V3], group: &ResolvedGroup, scale: f64) -> Result<()> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("part scale must be positive, got {scale}")));
    }
    let a = group.axis;
    for &i in &group.indices {
        let d = a.dot(&(vertices[i] - group.anchor));
        vertices[i] += (scale - 1.0) * d * a;
    }
    Ok(())
}

/// Rodrigues' rotation from an axis-angle vector, with a series expansion
/// below 1e-4 radians so the map and its partials stay finite at zero.
pub fn rot_axis_angle(w: &V3) -> M3 {
    let (a, b) = rot_coeffs(w.norm());
    let k = skew(w);
    M3::identity() + a * k + b * (k * k)
}

// A = sin t / t, B = (1 - cos t) / t^2.
fn rot_coeffs(t: f64) -> (f64, f64) {
    if t < 1e-4 {
        let t2 = t * t;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        ((t.sin()) / t, (1.0 - t.cos()) / (t * t))
    }
}

// dA/dt / t and dB/dt / t, finite at t = 0.
fn rot_coeff_rates(t: f64) -> (f64, f64) {
    if t < 1e-4 {
        let t2 = t * t;
        (-1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0)
    } else {
        let (a, b) = rot_coeffs(t);
        ((t.cos() - a) / (t * t), (a - 2.0 * b) / (t * t))
    }
}

fn skew(w: &V3) -> M3 {
    M3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Partial derivatives dR/dw_k of the Rodrigues map, one 3x3 matrix per
/// axis-angle component.
pub fn rot_axis_angle_partials(w: &V3) -> [M3; 3] {
    let t = w.norm();
    let (a, b) = rot_coeffs(t);
    let (c1, c2) = rot_coeff_rates(t);
    let k = skew(w);
    let k2 = k * k;
    let basis = [V3::x(), V3::y(), V3::z()];
    let mut out = [M3::zeros(); 3];
    for (idx, e) in basis.iter().enumerate() {
        let ke = skew(e);
        out[idx] = c1 * w[idx] * k + a * ke + c2 * w[idx] * k2 + b * (ke * k + k * ke);
    }
    out
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct PoseCache {
    pub v0: Vec<V3>,
    v1: Vec<V3>,
    v2: Vec<V3>,
    /// Re-derived rest joints.
    p: Vec<V3>,
    /// Posed global joint positions and rotations.
    t: Vec<V3>,
    rg: Vec<M3>,
    rl: Vec<M3>,
}

/// Pose the template under `params` with an optional shape deformation.
pub fn pose_mesh(
    template: &TemplateModel,
    params: &PoseParams,
    shape: &ShapeState,
    beta: &[f64],
) -> Result<PosedMesh> {
    pose_mesh_cached(template, params, shape, beta).map(|(m, _)| m)
}

pub fn pose_mesh_cached(
    template: &TemplateModel,
    params: &PoseParams,
    shape: &ShapeState,
    beta: &[f64],
) -> Result<(PosedMesh, PoseCache)> {
    params.validate(template.n_joints())?;
    let v0 = apply_shape(template, shape, beta)?;
    pose_from_rest(template, params, v0)
}

/// Pose an already shape-deformed rest mesh (`v0` is the apply_shape output).
pub fn pose_from_rest(
    template: &TemplateModel,
    params: &PoseParams,
    v0: Vec<V3>,
) -> Result<(PosedMesh, PoseCache)> {
    let (beak, tail) = beak_tail(template)?;
    let mut v1 = v0.clone();
    scale_part_in_place(&mut v1, beak, params.kappa[0])?;
    let mut v2 = v1.clone();
    scale_part_in_place(&mut v2, tail, params.kappa[1])?;

    let p = weighted_centroids(&v2, &template.joint_verts, &template.joint_mass, &template.joints);
    let (t, rg, rl) = forward_kinematics(template, params, &p);

    let gamma = params.gamma_v3();
    let mut out = Vec::with_capacity(v2.len());
    for (i, vi) in v2.iter().enumerate() {
        let mut acc = V3::zeros();
        for &(j, w) in &template.skin_weights[i] {
            acc += w * (rg[j] * (vi - p[j]) + t[j]);
        }
        out.push(acc + gamma);
    }
    let joints_posed: Vec<V3> = t.iter().map(|tj| tj + gamma).collect();

    Ok((
        PosedMesh {
            vertices: out,
            joints: joints_posed,
        },
        PoseCache {
            v0,
            v1,
            v2,
            p,
            t,
            rg,
            rl,
        },
    ))
}

fn beak_tail(template: &TemplateModel) -> Result<(&ResolvedGroup, &ResolvedGroup)> {
    let beak = template
        .group("beak")
        .ok_or_else(|| Error::Validation("template has no `beak` part group".into()))?
        .1;
    let tail = template
        .group("tail")
        .ok_or_else(|| Error::Validation("template has no `tail` part group".into()))?
        .1;
    Ok((beak, tail))
}

fn forward_kinematics(
    template: &TemplateModel,
    params: &PoseParams,
    p: &[V3],
) -> (Vec<V3>, Vec<M3>, Vec<M3>) {
    let j = template.n_joints();
    let mut t = vec![V3::zeros(); j];
    let mut rg = vec![M3::identity(); j];
    let mut rl = vec![M3::identity(); j];
    for &k in &template.topo_order {
        let w = V3::new(params.theta[3 * k], params.theta[3 * k + 1], params.theta[3 * k + 2]);
        rl[k] = rot_axis_angle(&w);
        match template.parent[k] {
            None => {
                rg[k] = rl[k];
                t[k] = p[k];
            }
            Some(par) => {
                rg[k] = rg[par] * rl[k];
                t[k] = t[par] + rg[par] * (params.alpha[k] * (p[k] - p[par]));
            }
        }
    }
    (t, rg, rl)
}

/// Gradients of a scalar loss with respect to every pose input.
#[derive(Debug, Clone)]
pub struct PoseGrads {
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: [f64; 3],
    pub kappa: [f64; 2],
    /// d loss / d v0 (the apply_shape output); chain onto dv, V, beta.
    pub rest: Vec<V3>,
}

/// Reverse-mode pull-back through the posing chain.
/// `vbar[i]` is d(loss)/d(out_i); joints' own contributions (if the loss
/// also reads posed joints) can be folded in via `jbar`.
pub fn pose_backward(
    template: &TemplateModel,
    params: &PoseParams,
    cache: &PoseCache,
    vbar: &[V3],
    jbar: Option<&[V3]>,
) -> PoseGrads {
    let n = template.n_vertices();
    let nj = template.n_joints();
    debug_assert_eq!(vbar.len(), n);

    let mut gamma_bar = V3::zeros();
    let mut t_bar = vec![V3::zeros(); nj];
    let mut rg_bar = vec![M3::zeros(); nj];
    let mut p_bar = vec![V3::zeros(); nj];
    let mut v2_bar = vec![V3::zeros(); n];
    let mut theta_bar = vec![0.0; 3 * nj];
    let mut alpha_bar = vec![0.0; nj];

    // Skinning: out_i = sum_j w (Rg_j (v2_i - p_j) + t_j) + gamma.
    for (i, vb) in vbar.iter().enumerate() {
        gamma_bar += vb;
        let vi = cache.v2[i];
        for &(j, w) in &template.skin_weights[i] {
            let local = vi - cache.p[j];
            rg_bar[j] += w * vb * local.transpose();
            t_bar[j] += w * vb;
            let pulled = w * (cache.rg[j].transpose() * vb);
            v2_bar[i] += pulled;
            p_bar[j] -= pulled;
        }
    }
    if let Some(jb) = jbar {
        for (j, b) in jb.iter().enumerate() {
            gamma_bar += b;
            t_bar[j] += b;
        }
    }

    // FK chain, children before parents.
    for &k in template.topo_order.iter().rev() {
        match template.parent[k] {
            Some(par) => {
                // t_k = t_par + Rg_par * alpha_k (p_k - p_par)
                let off_rest = cache.p[k] - cache.p[par];
                let tb = t_bar[k];
                t_bar[par] += tb;
                rg_bar[par] += tb * (params.alpha[k] * off_rest).transpose();
                let off_bar = cache.rg[par].transpose() * tb;
                alpha_bar[k] += off_bar.dot(&off_rest);
                p_bar[k] += params.alpha[k] * off_bar;
                p_bar[par] -= params.alpha[k] * off_bar;
                // Rg_k = Rg_par * Rl_k
                let rgk_bar = rg_bar[k];
                rg_bar[par] += rgk_bar * cache.rl[k].transpose();
                let rl_bar = cache.rg[par].transpose() * rg_bar[k];
                let w = V3::new(params.theta[3 * k], params.theta[3 * k + 1], params.theta[3 * k + 2]);
                let partials = rot_axis_angle_partials(&w);
                for a in 0..3 {
                    theta_bar[3 * k + a] = frob_dot(&rl_bar, &partials[a]);
                }
            }
            None => {
                p_bar[k] += t_bar[k];
                let w = V3::new(params.theta[3 * k], params.theta[3 * k + 1], params.theta[3 * k + 2]);
                let partials = rot_axis_angle_partials(&w);
                for a in 0..3 {
                    theta_bar[3 * k + a] = frob_dot(&rg_bar[k], &partials[a]);
                }
            }
        }
    }

    // Joint re-derivation: p_j = sum_i w_ij v2_i / mass_j.
    for j in 0..nj {
        if template.joint_mass[j] > 1e-9 {
            let scale = 1.0 / template.joint_mass[j];
            for &(vi, w) in &template.joint_verts[j] {
                v2_bar[vi] += w * scale * p_bar[j];
            }
        }
    }

    // Part scalings, reverse order (tail then beak).
    let (beak, tail) = beak_tail(template).expect("checked in forward");
    let mut kappa_bar = [0.0; 2];
    let v1_bar = scale_part_backward(&cache.v1, tail, params.kappa[1], v2_bar, &mut kappa_bar[1]);
    let rest = scale_part_backward(&cache.v0, beak, params.kappa[0], v1_bar, &mut kappa_bar[0]);

    PoseGrads {
        theta: theta_bar,
        alpha: alpha_bar,
        gamma: [gamma_bar.x, gamma_bar.y, gamma_bar.z],
        kappa: kappa_bar,
        rest,
    }
}

// Pull a gradient back through v_out = v_in + (s-1) * a a^T (v_in - c).
fn scale_part_backward(
    v_in: &[V3],
    group: &ResolvedGroup,
    scale: f64,
    mut grad: Vec<V3>,
    scale_bar: &mut f64,
) -> Vec<V3> {
    let a = group.axis;
    for &i in &group.indices {
        let d = a.dot(&(v_in[i] - group.anchor));
        let along = a.dot(&grad[i]);
        *scale_bar += d * along;
        grad[i] += (scale - 1.0) * along * a;
    }
    grad
}

fn frob_dot(a: &M3, b: &M3) -> f64 {
    let mut s = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            s += a[(r, c)] * b[(r, c)];
        }
    }
    s
}

/// Posed positions of the template's keypoints only, skipping shape
/// deformation. Used to build the synthetic initialization database,
/// where only keypoints are needed and dv = 0.
pub fn pose_keypoints(template: &TemplateModel, params: &PoseParams) -> Result<Vec<V3>> {
    params.validate(template.n_joints())?;
    if params.kappa != [1.0; 2] {
        // Part scaling moves vertices; fall back to the full path.
        let shape = ShapeState::zero(template.n_vertices());
        let posed = pose_mesh(template, params, &shape, &[])?;
        return Ok(template
            .keypoint_map
            .iter()
            .enumerate()
            .map(|(k, _)| template.keypoint_position(k, &posed.vertices))
            .collect());
    }
    let p = &template.rest_centroids;
    let (t, rg, _) = forward_kinematics(template, params, p);
    let gamma = params.gamma_v3();
    let mut out = Vec::with_capacity(template.keypoint_map.len());
    for kp in &template.keypoint_map {
        let mut acc = V3::zeros();
        for &vi in &kp.vertices {
            let v = template.vertices[vi];
            let mut pos = V3::zeros();
            for &(j, w) in &template.skin_weights[vi] {
                pos += w * (rg[j] * (v - p[j]) + t[j]);
            }
            acc += pos;
        }
        out.push(acc / kp.vertices.len() as f64 + gamma);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::synthetic::{synthetic_bird, SyntheticConfig};
    use crate::mesh::{Basis, PartGroup};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bird() -> TemplateModel {
        synthetic_bird(&SyntheticConfig::default()).unwrap()
    }

    #[test]
    fn rodrigues_matches_quarter_turn() {
        let r = rot_axis_angle(&V3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let v = r * V3::new(1.0, 0.0, 0.0);
        assert!((v - V3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rodrigues_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let scale = if trial % 4 == 0 { 1e-6 } else { 1.0 };
            let w = V3::new(
                rng.gen_range(-1.5..1.5) * scale,
                rng.gen_range(-1.5..1.5) * scale,
                rng.gen_range(-1.5..1.5) * scale,
            );
            let parts = rot_axis_angle_partials(&w);
            let h = 1e-6;
            for k in 0..3 {
                let mut wp = w;
                let mut wm = w;
                wp[k] += h;
                wm[k] -= h;
                let fd = (rot_axis_angle(&wp) - rot_axis_angle(&wm)) / (2.0 * h);
                assert!(
                    (fd - parts[k]).norm() < 1e-7,
                    "partial {k} mismatch at w={w:?}: {}",
                    (fd - parts[k]).norm()
                );
            }
        }
    }

    #[test]
    fn apply_shape_identity_and_translation() {
        let t = bird();
        let n = t.n_vertices();
        let shape = ShapeState::zero(n);
        let out = apply_shape(&t, &shape, &[]).unwrap();
        assert_eq!(out, t.vertices);

        let mut dv = vec![0.0; 3 * n];
        for i in 0..n {
            dv[3 * i] = 0.1;
        }
        let out = apply_shape(&t, &ShapeState::mean_only(dv), &[]).unwrap();
        for (o, v) in out.iter().zip(&t.vertices) {
            assert!((o - (v + V3::new(0.1, 0.0, 0.0))).norm() < 1e-15);
        }
    }

    #[test]
    fn apply_shape_matches_dense_oracle() {
        // Random dv, V, beta on a tetrahedron, against explicit summation.
        let vertices = vec![
            V3::new(0.0, 0.0, 0.0),
            V3::new(1.0, 0.0, 0.0),
            V3::new(0.0, 1.0, 0.0),
            V3::new(0.0, 0.0, 1.0),
        ];
        let t = TemplateModel::new(
            vertices,
            vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
            vec![V3::zeros()],
            vec![None],
            vec![vec![(0, 1.0)]; 4],
            vec![],
            vec![],
            vec![],
            vec![1.0; 4],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 3;
        let dv: Vec<f64> = (0..12).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..12).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let beta: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shape = ShapeState {
            dv: dv.clone(),
            basis: Basis::from_columns(12, &cols).unwrap(),
        };
        let out = apply_shape(&t, &shape, &beta).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                let mut expect = t.vertices[i][c] + dv[3 * i + c];
                for (kk, col) in cols.iter().enumerate() {
                    expect += beta[kk] * col[3 * i + c];
                }
                assert!((out[i][c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_shape_dimension_errors_name_field() {
        let t = bird();
        let shape = ShapeState::mean_only(vec![0.0; 5]);
        match apply_shape(&t, &shape, &[]) {
            Err(Error::DimensionMismatch { field, .. }) => assert_eq!(field, "dv"),
            other => panic!("expected dimension error, got {other:?}"),
        }
        let shape = ShapeState::zero(t.n_vertices());
        match apply_shape(&t, &shape, &[1.0]) {
            Err(Error::DimensionMismatch { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn scale_part_identity_and_errors() {
        let t = bird();
        let (_, g) = t.group("beak").unwrap();
        let out = scale_part(&t.vertices, g, 1.0).unwrap();
        assert_eq!(out, t.vertices);
        assert!(scale_part(&t.vertices, g, 0.0).is_err());
        assert!(scale_part(&t.vertices, g, -2.0).is_err());
    }

    #[test]
    fn scale_part_unit_segment() {
        // Beak group as a unit segment from the anchor along its axis:
        // endpoint must land at distance 2 after scale = 2.
        let t = bird();
        let (_, g) = t.group("beak").unwrap();
        let a = g.axis;
        let mut verts = t.vertices.clone();
        let i0 = g.indices[0];
        let i1 = g.indices[1];
        verts[i0] = g.anchor;
        verts[i1] = g.anchor + a;
        let g2 = ResolvedGroup {
            indices: vec![i0, i1],
            anchor: g.anchor,
            axis: a,
        };
        let out = scale_part(&verts, &g2, 2.0).unwrap();
        assert!((out[i0] - g.anchor).norm() < 1e-15);
        assert!(((out[i1] - g.anchor).norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scale_part_halves_extent_and_preserves_rest() {
        let t = bird();
        let (_, g) = t.group("tail").unwrap();
        let out = scale_part(&t.vertices, g, 0.5).unwrap();
        let extent = |verts: &[V3]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in &g.indices {
                let d = g.axis.dot(&(verts[i] - g.anchor));
                lo = lo.min(d);
                hi = hi.max(d);
            }
            hi - lo
        };
        let before = extent(&t.vertices);
        let after = extent(&out);
        assert!((after - before * 0.5).abs() < 1e-9);
        let in_group: std::collections::HashSet<_> = g.indices.iter().copied().collect();
        for i in 0..t.n_vertices() {
            if !in_group.contains(&i) {
                assert_eq!(out[i], t.vertices[i], "off-group vertex {i} moved");
            }
        }
    }

    #[test]
    fn rest_pose_identity() {
        let t = bird();
        let params = PoseParams::neutral(t.n_joints());
        let shape = ShapeState::zero(t.n_vertices());
        let posed = pose_mesh(&t, &params, &shape, &[]).unwrap();
        for (a, b) in posed.vertices.iter().zip(&t.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn translation_equivariance() {
        let t = bird();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = ShapeState::zero(t.n_vertices());
        for _ in 0..3 {
            let mut params = PoseParams::neutral(t.n_joints());
            for v in params.theta.iter_mut() {
                *v = rng.gen_range(-0.4..0.4);
            }
            for v in params.alpha.iter_mut() {
                *v = rng.gen_range(0.8..1.2);
            }
            params.kappa = [rng.gen_range(0.7..1.4), rng.gen_range(0.7..1.4)];
            let base = pose_mesh(&t, &params, &shape, &[]).unwrap();
            params.gamma = [1.0, 2.0, 3.0];
            let moved = pose_mesh(&t, &params, &shape, &[]).unwrap();
            for (m, b) in moved.vertices.iter().zip(&base.vertices) {
                assert!((m - (b + V3::new(1.0, 2.0, 3.0))).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_translation() {
        let t = bird();
        let mut params = PoseParams::neutral(t.n_joints());
        params.gamma = [1.0, 2.0, 3.0];
        let shape = ShapeState::zero(t.n_vertices());
        let posed = pose_mesh(&t, &params, &shape, &[]).unwrap();
        for (a, b) in posed.vertices.iter().zip(&t.vertices) {
            assert!((a - (b + V3::new(1.0, 2.0, 3.0))).norm() < 1e-12);
        }
    }

    #[test]
    fn bone_scaling_scales_joint_distances() {
        let t = bird();
        let mut params = PoseParams::neutral(t.n_joints());
        for a in params.alpha.iter_mut() {
            *a = 1.7;
        }
        let shape = ShapeState::zero(t.n_vertices());
        let posed = pose_mesh(&t, &params, &shape, &[]).unwrap();
        let rest = &t.rest_centroids;
        for k in 0..t.n_joints() {
            if let Some(par) = t.parent[k] {
                let d0 = (rest[k] - rest[par]).norm();
                let d1 = (posed.joints[k] - posed.joints[par]).norm();
                assert!(
                    (d1 - 1.7 * d0).abs() < 1e-9 * (1.0 + d0),
                    "joint {k}: {d1} vs {}",
                    1.7 * d0
                );
            }
        }
    }

    #[test]
    fn two_bone_chain_matches_rigid_oracle() {
        // Hard weights; rotating the child joint by pi/2 about z must
        // rotate child-bone vertices rigidly about the derived joint.
        let vertices = vec![
            V3::new(0.0, 0.1, 0.0),
            V3::new(0.0, -0.1, 0.0),
            V3::new(0.5, 0.0, 0.1),
            V3::new(1.2, 0.1, 0.0),
            V3::new(1.2, -0.1, 0.0),
            V3::new(1.8, 0.0, 0.1),
        ];
        let faces = vec![[0, 1, 2], [3, 4, 5]];
        let joints = vec![V3::new(0.0, 0.0, 0.0), V3::new(1.0, 0.0, 0.0)];
        let skin = vec![
            vec![(0, 1.0)],
            vec![(0, 1.0)],
            vec![(0, 1.0)],
            vec![(1, 1.0)],
            vec![(1, 1.0)],
            vec![(1, 1.0)],
        ];
        // Keep the posing path total by giving the chain trivial part groups
        // anchored at the root (scale 1 leaves them untouched).
        let groups = vec![
            PartGroup {
                name: "beak".into(),
                vertices: vec![2],
                anchor_joint: 0,
            },
            PartGroup {
                name: "tail".into(),
                vertices: vec![5],
                anchor_joint: 1,
            },
        ];
        let t = TemplateModel::new(
            vertices.clone(),
            faces,
            joints,
            vec![None, Some(0)],
            skin,
            vec![],
            groups,
            vec![],
            vec![1.0; 6],
        )
        .unwrap();
        let mut params = PoseParams::neutral(2);
        params.theta[5] = std::f64::consts::FRAC_PI_2; // child joint, z axis
        let shape = ShapeState::zero(6);
        let posed = pose_mesh(&t, &params, &shape, &[]).unwrap();

        // Oracle: centroid of child verts is the derived joint; rotation
        // about it by the same parent-frame rotation.
        let c = (vertices[3] + vertices[4] + vertices[5]) / 3.0;
        let r = rot_axis_angle(&V3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        for i in 3..6 {
            let expect = r * (vertices[i] - c) + c;
            assert!((posed.vertices[i] - expect).norm() < 1e-12, "vertex {i}");
        }
        // Parent-bone vertices untouched.
        for i in 0..3 {
            assert!((posed.vertices[i] - vertices[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn single_joint_all_ones_is_rigid() {
        let vertices = vec![
            V3::new(0.3, 0.0, 0.0),
            V3::new(0.0, 0.4, 0.0),
            V3::new(0.0, 0.0, 0.5),
            V3::new(0.2, 0.2, 0.2),
        ];
        let t = TemplateModel::new(
            vertices.clone(),
            vec![[0, 1, 2], [0, 1, 3]],
            vec![V3::new(0.1, 0.1, 0.1)],
            vec![None],
            vec![vec![(0, 1.0)]; 4],
            vec![],
            vec![
                PartGroup {
                    name: "beak".into(),
                    vertices: vec![0],
                    anchor_joint: 0,
                },
                PartGroup {
                    name: "tail".into(),
                    vertices: vec![1],
                    anchor_joint: 0,
                },
            ],
            vec![],
            vec![1.0; 4],
        )
        .unwrap();
        let mut params = PoseParams::neutral(1);
        params.theta = vec![0.3, -0.2, 0.9];
        params.gamma = [0.5, -0.4, 0.2];
        let shape = ShapeState::zero(4);
        let posed = pose_mesh(&t, &params, &shape, &[]).unwrap();

        let c = (vertices[0] + vertices[1] + vertices[2] + vertices[3]) / 4.0;
        let r = rot_axis_angle(&V3::new(0.3, -0.2, 0.9));
        let g = V3::new(0.5, -0.4, 0.2);
        for i in 0..4 {
            let expect = r * (vertices[i] - c) + c + g;
            assert!((posed.vertices[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_backward_matches_finite_differences() {
        let t = synthetic_bird(&SyntheticConfig {
            resolution: 1,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let n = t.n_vertices();
        let nj = t.n_joints();
        let mut rng = ChaCha8Rng::seed_from_u64(21);

        let mut params = PoseParams::neutral(nj);
        for v in params.theta.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in params.alpha.iter_mut() {
            *v = rng.gen_range(0.85..1.2);
        }
        params.gamma = [0.3, -0.2, 0.5];
        params.kappa = [1.3, 0.8];
        let dv: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-0.02..0.02)).collect();
        let shape = ShapeState::mean_only(dv.clone());

        // Scalar probe: L = sum_i c_i . out_i with random fixed c.
        let probes: Vec<V3> = (0..n)
            .map(|_| V3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let loss = |params: &PoseParams, shape: &ShapeState| -> f64 {
            let posed = pose_mesh(&t, params, shape, &[]).unwrap();
            posed
                .vertices
                .iter()
                .zip(&probes)
                .map(|(v, c)| v.dot(c))
                .sum()
        };

        let (_, cache) = pose_mesh_cached(&t, &params, &shape, &[]).unwrap();
        let grads = pose_backward(&t, &params, &cache, &probes, None);

        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);

        // theta coords (sample)
        for k in (0..3 * nj).step_by(5) {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.theta[k] += h;
            pm.theta[k] -= h;
            let fd = (loss(&pp, &shape) - loss(&pm, &shape)) / (2.0 * h);
            assert!(rel(fd, grads.theta[k]) < 1e-5, "theta[{k}]: fd={fd} an={}", grads.theta[k]);
        }
        // alpha
        for k in 0..nj {
            if t.parent[k].is_none() {
                continue;
            }
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.alpha[k] += h;
            pm.alpha[k] -= h;
            let fd = (loss(&pp, &shape) - loss(&pm, &shape)) / (2.0 * h);
            assert!(rel(fd, grads.alpha[k]) < 1e-5, "alpha[{k}]: fd={fd} an={}", grads.alpha[k]);
        }
        // gamma
        for k in 0..3 {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.gamma[k] += h;
            pm.gamma[k] -= h;
            let fd = (loss(&pp, &shape) - loss(&pm, &shape)) / (2.0 * h);
            assert!(rel(fd, grads.gamma[k]) < 1e-6, "gamma[{k}]");
        }
        // kappa
        for k in 0..2 {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.kappa[k] += h;
            pm.kappa[k] -= h;
            let fd = (loss(&pp, &shape) - loss(&pm, &shape)) / (2.0 * h);
            assert!(rel(fd, grads.kappa[k]) < 1e-5, "kappa[{k}]: fd={fd} an={}", grads.kappa[k]);
        }
        // rest-vertex gradient (through dv), sampled
        for k in (0..3 * n).step_by(97) {
            let mut dp = dv.clone();
            let mut dm = dv.clone();
            dp[k] += h;
            dm[k] -= h;
            let fd = (loss(&params, &ShapeState::mean_only(dp))
                - loss(&params, &ShapeState::mean_only(dm)))
                / (2.0 * h);
            let an = grads.rest[k / 3][k % 3];
            assert!(rel(fd, an) < 1e-5, "rest[{k}]: fd={fd} an={an}");
        }
    }

    #[test]
    fn pose_keypoints_fast_path_matches_full() {
        let t = bird();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = PoseParams::neutral(t.n_joints());
        for v in params.theta.iter_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
        for v in params.alpha.iter_mut() {
            *v = rng.gen_range(0.9..1.1);
        }
        params.gamma = [0.2, 0.1, 4.0];
        let fast = pose_keypoints(&t, &params).unwrap();
        let shape = ShapeState::zero(t.n_vertices());
        let posed = pose_mesh(&t, &params, &shape, &[]).unwrap();
        for (k, kp) in fast.iter().enumerate() {
            let full = t.keypoint_position(k, &posed.vertices);
            assert!((kp - full).norm() < 1e-12);
        }
    }
}
