//! Dataset manifest: JSON listing instances (keypoints with visibility,
//! mask paths, bounding boxes, species) plus the camera and the template
//! reference the annotations were made against.

use super::{atomic_write, json_from_str, json_to_vec, read_mask_pgm, write_mask_pgm};
use crate::error::Result;
use crate::instance::{AnnotatedInstance, Keypoint2D};
use crate::render::Camera;
use std::path::{Path, PathBuf};

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestFile {
    template: String,
    template_hash: String,
    camera: Camera,
    instances: Vec<InstanceEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct InstanceEntry {
    id: String,
    species: String,
    /// (u, v, visible) triples.
    keypoints: Vec<(f64, f64, u8)>,
    mask: String,
    bbox: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct Manifest {
    /// Absolute path to the template sidecar.
    pub template_path: PathBuf,
    pub template_hash: String,
    pub camera: Camera,
    pub instances: Vec<AnnotatedInstance>,
}

pub fn save_manifest(path: &Path, manifest: &Manifest, mask_dir_name: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mask_dir = dir.join(mask_dir_name);
    std::fs::create_dir_all(&mask_dir).map_err(|e| crate::error::Error::io(&mask_dir, e))?;
    let mut entries = Vec::with_capacity(manifest.instances.len());
    for inst in &manifest.instances {
        let mask_rel = format!("{mask_dir_name}/{}.pgm", inst.id);
        write_mask_pgm(&dir.join(&mask_rel), &inst.mask)?;
        entries.push(InstanceEntry {
            id: inst.id.clone(),
            species: inst.species.clone(),
            keypoints: inst
                .keypoints
                .iter()
                .map(|k| (k.u, k.v, u8::from(k.visible)))
                .collect(),
            mask: mask_rel,
            bbox: inst.bbox,
        });
    }
    let template_rel = pathdiff(dir, &manifest.template_path);
    let file = ManifestFile {
        template: template_rel,
        template_hash: manifest.template_hash.clone(),
        camera: manifest.camera,
        instances: entries,
    };
    atomic_write(path, &json_to_vec(path, &file)?)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = super::read_to_string(path)?;
    let file: ManifestFile = json_from_str(path, &text)?;
    file.camera.validate()?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut instances = Vec::with_capacity(file.instances.len());
    for e in file.instances {
        let mask = read_mask_pgm(&dir.join(&e.mask))?;
        let inst = AnnotatedInstance {
            id: e.id,
            species: e.species,
            keypoints: e
                .keypoints
                .iter()
                .map(|&(u, v, vis)| Keypoint2D {
                    u,
                    v,
                    visible: vis != 0,
                })
                .collect(),
            mask,
            bbox: e.bbox,
        };
        inst.validate(file.camera.width, file.camera.height)?;
        instances.push(inst);
    }
    Ok(Manifest {
        template_path: dir.join(&file.template),
        template_hash: file.template_hash,
        camera: file.camera,
        instances,
    })
}

/// Relative path from `from` to `to` when `to` sits under `from`;
/// otherwise the path as given.
fn pathdiff(from: &Path, to: &Path) -> String {
    match to.strip_prefix(from) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => to.to_string_lossy().into_owned(),
    }
}
