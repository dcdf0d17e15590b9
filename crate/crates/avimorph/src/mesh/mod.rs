//! Articulated template model: rest-pose mesh, skeleton, skinning weights
//! and the vertex maps used by the fitting energies.

mod pose;
pub mod synthetic;

pub use pose::{
    apply_shape, pose_backward, pose_from_rest, pose_keypoints, pose_mesh, pose_mesh_cached,
    rot_axis_angle, rot_axis_angle_partials, scale_part, PoseCache, PoseGrads, PosedMesh,
};

use crate::error::{Error, Result};

pub type V3 = nalgebra::Vector3<f64>;
pub type M3 = nalgebra::Matrix3<f64>;

/// Keypoint ids used for the body-length axis. The loader does not require
/// them, but unit-body-length normalization and part anchors do.
pub const KP_BEAK_TIP: &str = "beak_tip";
pub const KP_TAIL_TIP: &str = "tail_tip";

/// A named keypoint mapped onto one or more mesh vertices (averaged).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub vertices: Vec<usize>,
}

/// A named vertex group with an anchor joint for length scaling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PartGroup {
    pub name: String,
    pub vertices: Vec<usize>,
    pub anchor_joint: usize,
}

/// Part group resolved against a template: anchor position and unit
/// principal axis of the group's rest-pose vertices.
#[derive(Debug, Clone)]
pub struct ResolvedGroup {
    pub indices: Vec<usize>,
    pub anchor: V3,
    pub axis: V3,
}

/// The articulated rest-pose template. Immutable after construction and
/// safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct TemplateModel {
    pub vertices: Vec<V3>,
    pub faces: Vec<[usize; 3]>,
    pub joints: Vec<V3>,
    /// Parent joint per joint; exactly one root with `None`.
    pub parent: Vec<Option<usize>>,
    /// Sparse skinning weights per vertex: (joint, weight), weights >= 0,
    /// each row summing to 1 within 1e-6.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    pub keypoint_map: Vec<Keypoint>,
    pub part_groups: Vec<PartGroup>,
    /// Vertex pairs mirrored across the sagittal (x = 0) plane; midline
    /// vertices appear as self-pairs (p, p).
    pub symmetry_pairs: Vec<(usize, usize)>,
    /// Per-vertex rigidity multipliers (>= 1; legs and claws elevated).
    pub rigidity_weights: Vec<f64>,
    /// Unique undirected edges derived from faces, each with p < q.
    pub edges: Vec<(usize, usize)>,

    // Derived data, filled in by `finalize`.
    pub(crate) topo_order: Vec<usize>,
    pub(crate) joint_verts: Vec<Vec<(usize, f64)>>,
    pub(crate) joint_mass: Vec<f64>,
    pub(crate) rest_centroids: Vec<V3>,
    pub(crate) neighbors: Vec<Vec<usize>>,
    pub(crate) resolved_groups: Vec<ResolvedGroup>,
}

impl TemplateModel {
    /// Validate invariants and compute derived tables. All loaders and
    /// generators must go through this.
    pub fn new(
        vertices: Vec<V3>,
        faces: Vec<[usize; 3]>,
        joints: Vec<V3>,
        parent: Vec<Option<usize>>,
        skin_weights: Vec<Vec<(usize, f64)>>,
        keypoint_map: Vec<Keypoint>,
        part_groups: Vec<PartGroup>,
        symmetry_pairs: Vec<(usize, usize)>,
        rigidity_weights: Vec<f64>,
    ) -> Result<Self> {
        let n = vertices.len();
        let j = joints.len();
        if n == 0 {
            return Err(Error::Validation("template has no vertices".into()));
        }
        if parent.len() != j {
            return Err(Error::DimensionMismatch {
                field: "parent",
                expected: j,
                got: parent.len(),
            });
        }
        if skin_weights.len() != n {
            return Err(Error::DimensionMismatch {
                field: "skin_weights",
                expected: n,
                got: skin_weights.len(),
            });
        }
        if rigidity_weights.len() != n {
            return Err(Error::DimensionMismatch {
                field: "rigidity_weights",
                expected: n,
                got: rigidity_weights.len(),
            });
        }

        // Single rooted tree: one root, every other joint reaches it.
        let roots: Vec<usize> = (0..j).filter(|&k| parent[k].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Validation(format!(
                "skeleton must have exactly one root, found {}",
                roots.len()
            )));
        }
        for k in 0..j {
            let mut cur = k;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                if p >= j {
                    return Err(Error::Validation(format!("joint {cur} has parent {p} out of range")));
                }
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(Error::Validation(format!("joint {k} is part of a parent cycle")));
                }
            }
        }

        for (vi, row) in skin_weights.iter().enumerate() {
            let mut sum = 0.0;
            for &(jk, w) in row {
                if jk >= j {
                    return Err(Error::Validation(format!("vertex {vi} skinned to joint {jk} out of range")));
                }
                if w < 0.0 {
                    return Err(Error::Validation(format!("vertex {vi} has negative skin weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("vertex {vi} skin weights sum to {sum}, expected 1")));
            }
        }

        for f in &faces {
            for &i in f {
                if i >= n {
                    return Err(Error::Validation(format!("face index {i} out of range ({n} vertices)")));
                }
            }
        }
        for kp in &keypoint_map {
            if kp.vertices.is_empty() {
                return Err(Error::Validation(format!("keypoint `{}` maps to no vertices", kp.name)));
            }
            for &i in &kp.vertices {
                if i >= n {
                    return Err(Error::Validation(format!("keypoint `{}` index {i} out of range", kp.name)));
                }
            }
        }
        for g in &part_groups {
            if g.vertices.is_empty() {
                return Err(Error::Validation(format!("part group `{}` is empty", g.name)));
            }
            if g.anchor_joint >= j {
                return Err(Error::Validation(format!("part group `{}` anchor joint out of range", g.name)));
            }
            for &i in &g.vertices {
                if i >= n {
                    return Err(Error::Validation(format!("part group `{}` index {i} out of range", g.name)));
                }
            }
        }

        // Symmetry must be an involution.
        let mut mirror: Vec<Option<usize>> = vec![None; n];
        for &(p, q) in &symmetry_pairs {
            if p >= n || q >= n {
                return Err(Error::Validation(format!("symmetry pair ({p}, {q}) out of range")));
            }
            for (a, b) in [(p, q), (q, p)] {
                match mirror[a] {
                    None => mirror[a] = Some(b),
                    Some(prev) if prev == b => {}
                    Some(prev) => {
                        return Err(Error::Validation(format!(
                            "vertex {a} mirrored to both {prev} and {b}"
                        )))
                    }
                }
            }
        }
        for &r in &rigidity_weights {
            if !(r >= 1.0) {
                return Err(Error::Validation(format!("rigidity weight {r} below 1")));
            }
        }

        let edges = edges_from_faces(&faces);
        let mut neighbors = vec![Vec::new(); n];
        for &(p, q) in &edges {
            neighbors[p].push(q);
            neighbors[q].push(p);
        }

        // Children-before-parents is the reverse of this ordering.
        let topo_order = topo_sort(&parent, roots[0]);

        let mut joint_verts = vec![Vec::new(); j];
        let mut joint_mass = vec![0.0; j];
        for (vi, row) in skin_weights.iter().enumerate() {
            for &(jk, w) in row {
                joint_verts[jk].push((vi, w));
                joint_mass[jk] += w;
            }
        }
        let rest_centroids = weighted_centroids(&vertices, &joint_verts, &joint_mass, &joints);

        let resolved_groups = part_groups
            .iter()
            .map(|g| ResolvedGroup {
                indices: g.vertices.clone(),
                anchor: joints[g.anchor_joint],
                axis: principal_axis(&vertices, &g.vertices),
            })
            .collect();

        Ok(TemplateModel {
            vertices,
            faces,
            joints,
            parent,
            skin_weights,
            keypoint_map,
            part_groups,
            symmetry_pairs,
            rigidity_weights,
            edges,
            topo_order,
            joint_verts,
            joint_mass,
            rest_centroids,
            neighbors,
            resolved_groups,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn root(&self) -> usize {
        self.topo_order[0]
    }

    pub fn keypoint_index(&self, name: &str) -> Option<usize> {
        self.keypoint_map.iter().position(|k| k.name == name)
    }

    pub fn group(&self, name: &str) -> Option<(&PartGroup, &ResolvedGroup)> {
        self.part_groups
            .iter()
            .position(|g| g.name == name)
            .map(|i| (&self.part_groups[i], &self.resolved_groups[i]))
    }

    /// Rest-pose position of a keypoint on an arbitrary vertex set
    /// (mean over its mapped vertices).
    pub fn keypoint_position(&self, kp: usize, vertices: &[V3]) -> V3 {
        let ids = &self.keypoint_map[kp].vertices;
        let mut p = V3::zeros();
        for &i in ids {
            p += vertices[i];
        }
        p / ids.len() as f64
    }

    /// Rest-pose beak-tip to tail-tip distance; the unit used by
    /// body-length normalization.
    pub fn body_length(&self, vertices: &[V3]) -> Result<f64> {
        let beak = self
            .keypoint_index(KP_BEAK_TIP)
            .ok_or_else(|| Error::Validation(format!("template has no `{KP_BEAK_TIP}` keypoint")))?;
        let tail = self
            .keypoint_index(KP_TAIL_TIP)
            .ok_or_else(|| Error::Validation(format!("template has no `{KP_TAIL_TIP}` keypoint")))?;
        Ok((self.keypoint_position(beak, vertices) - self.keypoint_position(tail, vertices)).norm())
    }

    /// Mirror image of a point across the sagittal plane (x negated).
    pub fn mirror_point(p: &V3) -> V3 {
        V3::new(-p.x, p.y, p.z)
    }
}

fn edges_from_faces(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|f| {
            [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                .into_iter()
                .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn topo_sort(parent: &[Option<usize>], root: usize) -> Vec<usize> {
    let j = parent.len();
    let mut children = vec![Vec::new(); j];
    for k in 0..j {
        if let Some(p) = parent[k] {
            children[p].push(k);
        }
    }
    let mut order = Vec::with_capacity(j);
    let mut stack = vec![root];
    while let Some(k) = stack.pop() {
        order.push(k);
        for &c in children[k].iter().rev() {
            stack.push(c);
        }
    }
    order
}

/// Skinning-weighted vertex centroid per joint. Joints without skinning
/// support keep their authored rest position (no gradient flows there).
pub(crate) fn weighted_centroids(
    vertices: &[V3],
    joint_verts: &[Vec<(usize, f64)>],
    joint_mass: &[f64],
    fallback: &[V3],
) -> Vec<V3> {
    joint_verts
        .iter()
        .enumerate()
        .map(|(j, list)| {
            if joint_mass[j] > 1e-9 {
                let mut c = V3::zeros();
                for &(vi, w) in list {
                    c += w * vertices[vi];
                }
                c / joint_mass[j]
            } else {
                fallback[j]
            }
        })
        .collect()
}

/// Unit principal axis of a vertex subset (largest-eigenvalue direction of
/// the centered covariance). Sign is fixed by the largest component.
fn principal_axis(vertices: &[V3], indices: &[usize]) -> V3 {
    let mut mean = V3::zeros();
    for &i in indices {
        mean += vertices[i];
    }
    mean /= indices.len() as f64;
    let mut cov = M3::zeros();
    for &i in indices {
        let d = vertices[i] - mean;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut best = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] > eig.eigenvalues[best] {
            best = k;
        }
    }
    let mut axis = V3::new(
        eig.eigenvectors[(0, best)],
        eig.eigenvectors[(1, best)],
        eig.eigenvectors[(2, best)],
    );
    let norm = axis.norm();
    if norm < 1e-12 {
        // Degenerate group (single point); scaling along z is as good as any.
        return V3::new(0.0, 0.0, 1.0);
    }
    axis /= norm;
    let mut dom = 0;
    for k in 1..3 {
        if axis[k].abs() > axis[dom].abs() {
            dom = k;
        }
    }
    if axis[dom] < 0.0 {
        axis = -axis;
    }
    axis
}

/// Per-instance articulation state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseParams {
    /// Axis-angle per joint, radians; 3J entries.
    pub theta: Vec<f64>,
    /// Bone-length scale per joint (root entry inert), > 0.
    pub alpha: Vec<f64>,
    /// Root translation, model units.
    pub gamma: [f64; 3],
    /// Beak and tail length scales, > 0.
    pub kappa: [f64; 2],
}

impl PoseParams {
    pub fn neutral(n_joints: usize) -> Self {
        PoseParams {
            theta: vec![0.0; 3 * n_joints],
            alpha: vec![1.0; n_joints],
            gamma: [0.0; 3],
            kappa: [1.0; 2],
        }
    }

    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if self.theta.len() != 3 * n_joints {
            return Err(Error::DimensionMismatch {
                field: "theta",
                expected: 3 * n_joints,
                got: self.theta.len(),
            });
        }
        if self.alpha.len() != n_joints {
            return Err(Error::DimensionMismatch {
                field: "alpha",
                expected: n_joints,
                got: self.alpha.len(),
            });
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("theta contains non-finite entries".into()));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidArgument("alpha must be strictly positive".into()));
        }
        if !(self.kappa[0] > 0.0 && self.kappa[1] > 0.0) {
            return Err(Error::InvalidArgument("kappa must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn gamma_v3(&self) -> V3 {
        V3::new(self.gamma[0], self.gamma[1], self.gamma[2])
    }

    /// Wrap any axis-angle with magnitude >= pi onto the equivalent
    /// rotation with magnitude < pi. Keeps the rotation identical.
    pub fn wrap_theta(&mut self) {
        for c in self.theta.chunks_mut(3) {
            let mag = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if mag >= std::f64::consts::PI {
                let turns = (mag / (2.0 * std::f64::consts::PI)).round();
                let wrapped = mag - 2.0 * std::f64::consts::PI * turns;
                let s = wrapped / mag;
                c[0] *= s;
                c[1] *= s;
                c[2] *= s;
            }
        }
    }
}

/// Learned shape deformation: shared mean offset plus a linear basis.
#[derive(Debug, Clone)]
pub struct ShapeState {
    /// Per-vertex mean offset, 3N flat (x0 y0 z0 x1 ...).
    pub dv: Vec<f64>,
    /// Blend-shape basis, 3N x K column-major; K = 0 means mean-only.
    pub basis: Basis,
}

impl ShapeState {
    pub fn zero(n_vertices: usize) -> Self {
        ShapeState {
            dv: vec![0.0; 3 * n_vertices],
            basis: Basis::empty(3 * n_vertices),
        }
    }

    pub fn mean_only(dv: Vec<f64>) -> Self {
        let rows = dv.len();
        ShapeState {
            dv,
            basis: Basis::empty(rows),
        }
    }

    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        if self.dv.len() != 3 * n_vertices {
            return Err(Error::DimensionMismatch {
                field: "dv",
                expected: 3 * n_vertices,
                got: self.dv.len(),
            });
        }
        if self.basis.nrows != 3 * n_vertices {
            return Err(Error::DimensionMismatch {
                field: "basis",
                expected: 3 * n_vertices,
                got: self.basis.nrows,
            });
        }
        if self.dv.iter().any(|x| !x.is_finite()) || self.basis.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("shape state contains non-finite entries".into()));
        }
        Ok(())
    }
}

/// Dense column-major matrix used for blend-shape bases and PCA components.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl Basis {
    pub fn empty(nrows: usize) -> Self {
        Basis {
            nrows,
            ncols: 0,
            data: Vec::new(),
        }
    }

    pub fn from_columns(nrows: usize, cols: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(nrows * cols.len());
        for c in cols {
            if c.len() != nrows {
                return Err(Error::DimensionMismatch {
                    field: "basis",
                    expected: nrows,
                    got: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Ok(Basis {
            nrows,
            ncols: cols.len(),
            data,
        })
    }

    pub fn col(&self, k: usize) -> &[f64] {
        &self.data[k * self.nrows..(k + 1) * self.nrows]
    }

    /// y += V * beta
    pub fn accumulate(&self, beta: &[f64], y: &mut [f64]) {
        debug_assert_eq!(beta.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (k, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (yi, vi) in y.iter_mut().zip(self.col(k)) {
                *yi += b * vi;
            }
        }
    }

    /// V^T * x
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.ncols)
            .map(|k| self.col(k).iter().zip(x).map(|(v, xi)| v * xi).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_template() -> TemplateModel {
        // Two-joint chain with a tetrahedron on each bone.
        let vertices = vec![
            V3::new(0.0, 0.0, 0.0),
            V3::new(0.5, 0.5, 0.0),
            V3::new(0.5, -0.5, 0.0),
            V3::new(0.5, 0.0, 0.5),
            V3::new(1.5, 0.5, 0.0),
            V3::new(1.5, -0.5, 0.0),
            V3::new(1.5, 0.0, 0.5),
            V3::new(2.0, 0.0, 0.0),
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [4, 5, 6], [4, 6, 7], [5, 7, 6]];
        let joints = vec![V3::new(0.0, 0.0, 0.0), V3::new(1.0, 0.0, 0.0)];
        let parent = vec![None, Some(0)];
        let skin = (0..8)
            .map(|i| vec![(usize::from(i >= 4), 1.0)])
            .collect();
        TemplateModel::new(
            vertices,
            faces,
            joints,
            parent,
            skin,
            vec![],
            vec![],
            vec![],
            vec![1.0; 8],
        )
        .unwrap()
    }

    #[test]
    fn edges_are_unique_and_sorted() {
        let t = tiny_template();
        for w in t.edges.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(t.edges.iter().all(|&(p, q)| p < q));
        // Tetra fan on first bone shares edges: faces [0,1,2],[0,2,3],[0,3,1]
        // produce 6 unique edges among {0,1,2,3}.
        let first: Vec<_> = t.edges.iter().filter(|&&(p, _)| p < 4).collect();
        assert_eq!(first.len(), 6);
    }

    #[test]
    fn rejects_cycles_and_multi_roots() {
        let verts = vec![V3::zeros()];
        let skin = vec![vec![(0, 1.0)]];
        let r = TemplateModel::new(
            verts.clone(),
            vec![],
            vec![V3::zeros(), V3::zeros()],
            vec![Some(1), Some(0)],
            skin.clone(),
            vec![],
            vec![],
            vec![],
            vec![1.0],
        );
        assert!(r.is_err());
        let r = TemplateModel::new(
            verts,
            vec![],
            vec![V3::zeros(), V3::zeros()],
            vec![None, None],
            skin,
            vec![],
            vec![],
            vec![],
            vec![1.0],
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_bad_weight_rows() {
        let verts = vec![V3::zeros()];
        let r = TemplateModel::new(
            verts,
            vec![],
            vec![V3::zeros()],
            vec![None],
            vec![vec![(0, 0.5)]],
            vec![],
            vec![],
            vec![],
            vec![1.0],
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_inconsistent_symmetry() {
        let verts = vec![V3::new(1.0, 0.0, 0.0), V3::new(-1.0, 0.0, 0.0), V3::new(0.0, 1.0, 0.0)];
        let skin = vec![vec![(0, 1.0)]; 3];
        let r = TemplateModel::new(
            verts,
            vec![],
            vec![V3::zeros()],
            vec![None],
            skin,
            vec![],
            vec![],
            vec![(0, 1), (0, 2)],
            vec![1.0; 3],
        );
        assert!(r.is_err());
    }

    #[test]
    fn wrap_theta_keeps_rotation() {
        let mut p = PoseParams::neutral(1);
        p.theta = vec![0.0, 0.0, 4.0]; // > pi
        let before = rot_axis_angle(&V3::new(0.0, 0.0, 4.0));
        p.wrap_theta();
        let mag = (p.theta[0].powi(2) + p.theta[1].powi(2) + p.theta[2].powi(2)).sqrt();
        assert!(mag < std::f64::consts::PI);
        let after = rot_axis_angle(&V3::new(p.theta[0], p.theta[1], p.theta[2]));
        assert!((before - after).norm() < 1e-12);
    }

    #[test]
    fn topo_order_parents_first() {
        let t = tiny_template();
        let pos0 = t.topo_order.iter().position(|&k| k == 0).unwrap();
        let pos1 = t.topo_order.iter().position(|&k| k == 1).unwrap();
        assert!(pos0 < pos1);
    }
}
