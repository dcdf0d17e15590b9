//! Template files: an OBJ mesh plus a JSON sidecar holding the skeleton,
//! sparse skinning weights, keypoint/part/symmetry maps and rigidity.
//! The content hash ties models and manifests to the template they were
//! built from.

use super::{atomic_write, json_from_str, json_to_vec, read_obj, write_obj};
use crate::error::{Error, Result};
use crate::mesh::{Keypoint, PartGroup, TemplateModel, V3};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(serde::Serialize, serde::Deserialize)]
struct Sidecar {
    /// Mesh path, relative to this sidecar.
    obj: String,
    joints: Vec<[f64; 3]>,
    /// -1 marks the root.
    parent: Vec<i64>,
    /// Sparse (vertex, joint, weight) triplets.
    skin_weights: Vec<(usize, usize, f64)>,
    keypoint_map: Vec<Keypoint>,
    part_groups: Vec<PartGroup>,
    symmetry_pairs: Vec<(usize, usize)>,
    rigidity_weights: Vec<f64>,
}

pub fn save_template(sidecar_path: &Path, obj_name: &str, template: &TemplateModel) -> Result<()> {
    let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
    write_obj(&dir.join(obj_name), &template.vertices, &template.faces)?;
    let mut triplets = Vec::new();
    for (vi, row) in template.skin_weights.iter().enumerate() {
        for &(j, w) in row {
            triplets.push((vi, j, w));
        }
    }
    let sidecar = Sidecar {
        obj: obj_name.to_string(),
        joints: template.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
        parent: template
            .parent
            .iter()
            .map(|p| p.map(|v| v as i64).unwrap_or(-1))
            .collect(),
        skin_weights: triplets,
        keypoint_map: template.keypoint_map.clone(),
        part_groups: template.part_groups.clone(),
        symmetry_pairs: template.symmetry_pairs.clone(),
        rigidity_weights: template.rigidity_weights.clone(),
    };
    atomic_write(sidecar_path, &json_to_vec(sidecar_path, &sidecar)?)
}

pub fn load_template(sidecar_path: &Path) -> Result<TemplateModel> {
    let text = super::read_to_string(sidecar_path)?;
    let sidecar: Sidecar = json_from_str(sidecar_path, &text)?;
    let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
    let (vertices, faces) = read_obj(&dir.join(&sidecar.obj))?;
    let n = vertices.len();
    let mut skin = vec![Vec::new(); n];
    for (vi, j, w) in sidecar.skin_weights {
        if vi >= n {
            return Err(Error::parse(sidecar_path, format!("skin triplet vertex {vi} out of range")));
        }
        skin[vi].push((j, w));
    }
    let parent = sidecar
        .parent
        .iter()
        .map(|&p| if p < 0 { None } else { Some(p as usize) })
        .collect();
    TemplateModel::new(
        vertices,
        faces,
        sidecar.joints.iter().map(|j| V3::new(j[0], j[1], j[2])).collect(),
        parent,
        skin,
        sidecar.keypoint_map,
        sidecar.part_groups,
        sidecar.symmetry_pairs,
        sidecar.rigidity_weights,
    )
}

/// Content hash over the template's geometry and maps (first 16 hex
/// chars of SHA-256 over a canonical little-endian serialization).
pub fn template_hash(template: &TemplateModel) -> String {
    let mut h = Sha256::new();
    let mut put_u64 = |h: &mut Sha256, v: u64| h.update(v.to_le_bytes());
    put_u64(&mut h, template.n_vertices() as u64);
    put_u64(&mut h, template.n_joints() as u64);
    for v in &template.vertices {
        for c in [v.x, v.y, v.z] {
            h.update(c.to_le_bytes());
        }
    }
    for f in &template.faces {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    for j in &template.joints {
        for c in [j.x, j.y, j.z] {
            h.update(c.to_le_bytes());
        }
    }
    for p in &template.parent {
        h.update((p.map(|v| v as i64).unwrap_or(-1)).to_le_bytes());
    }
    for (vi, row) in template.skin_weights.iter().enumerate() {
        for &(j, w) in row {
            h.update((vi as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
            h.update(w.to_le_bytes());
        }
    }
    for kp in &template.keypoint_map {
        h.update(kp.name.as_bytes());
        for &v in &kp.vertices {
            h.update((v as u64).to_le_bytes());
        }
    }
    for g in &template.part_groups {
        h.update(g.name.as_bytes());
        h.update((g.anchor_joint as u64).to_le_bytes());
        for &v in &g.vertices {
            h.update((v as u64).to_le_bytes());
        }
    }
    for &(p, q) in &template.symmetry_pairs {
        h.update((p as u64).to_le_bytes());
        h.update((q as u64).to_le_bytes());
    }
    for &r in &template.rigidity_weights {
        h.update(r.to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::synthetic::{synthetic_bird, SyntheticConfig};

    #[test]
    fn template_roundtrip_preserves_everything() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sidecar = dir.path().join("bird.json");
        save_template(&sidecar, "bird.obj", &t).unwrap();
        let back = load_template(&sidecar).unwrap();
        assert_eq!(t.vertices, back.vertices);
        assert_eq!(t.faces, back.faces);
        assert_eq!(t.joints, back.joints);
        assert_eq!(t.parent, back.parent);
        assert_eq!(t.skin_weights, back.skin_weights);
        assert_eq!(t.symmetry_pairs, back.symmetry_pairs);
        assert_eq!(t.rigidity_weights, back.rigidity_weights);
        assert_eq!(template_hash(&t), template_hash(&back));
    }

    #[test]
    fn hash_changes_with_geometry() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        let h1 = template_hash(&t);
        let mut verts = t.vertices.clone();
        verts[0].x += 1e-12;
        let t2 = TemplateModel::new(
            verts,
            t.faces.clone(),
            t.joints.clone(),
            t.parent.clone(),
            t.skin_weights.clone(),
            t.keypoint_map.clone(),
            t.part_groups.clone(),
            t.symmetry_pairs.clone(),
            t.rigidity_weights.clone(),
        )
        .unwrap();
        assert_ne!(h1, template_hash(&t2));
    }
}
