//! Model files: a JSON header referencing raw little-endian f64 blobs.
//! Blobs live next to the header, named after its file stem.

use super::{atomic_write, json_from_str, json_to_vec, read_f64_blob, write_f64_blob};
use crate::error::{Error, Result};
use crate::mesh::Basis;
use crate::model::{MultiSpeciesModel, PcaModel, ShapeModel, SpeciesModel};
use std::path::Path;

#[derive(serde::Serialize, serde::Deserialize)]
struct BlobRef {
    path: String,
    rows: usize,
    cols: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct ModelFile {
    kind: String,
    template_hash: String,
    n_vertices: usize,
    species: Vec<String>,
    normalization: String,
    dv: Option<BlobRef>,
    basis: Option<BlobRef>,
    betas: Option<BlobRef>,
    pca_mean: BlobRef,
    pca_components: BlobRef,
    pca_variances: Vec<f64>,
    coeffs: Option<BlobRef>,
}

fn blob_name(stem: &str, field: &str) -> String {
    format!("{stem}.{field}.f64")
}

fn write_matrix(dir: &Path, stem: &str, field: &str, rows: usize, cols: &[Vec<f64>]) -> Result<BlobRef> {
    let name = blob_name(stem, field);
    let flat: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
    write_f64_blob(&dir.join(&name), &flat)?;
    Ok(BlobRef {
        path: name,
        rows,
        cols: cols.len(),
    })
}

fn write_basis(dir: &Path, stem: &str, field: &str, basis: &Basis) -> Result<BlobRef> {
    let name = blob_name(stem, field);
    write_f64_blob(&dir.join(&name), &basis.data)?;
    Ok(BlobRef {
        path: name,
        rows: basis.nrows,
        cols: basis.ncols,
    })
}

fn read_basis(dir: &Path, r: &BlobRef) -> Result<Basis> {
    let data = read_f64_blob(&dir.join(&r.path), r.rows * r.cols)?;
    Ok(Basis {
        nrows: r.rows,
        ncols: r.cols,
        data,
    })
}

fn read_columns(dir: &Path, r: &BlobRef) -> Result<Vec<Vec<f64>>> {
    let flat = read_f64_blob(&dir.join(&r.path), r.rows * r.cols)?;
    Ok(flat.chunks(r.rows).map(|c| c.to_vec()).collect())
}

pub fn save_model(path: &Path, model: &ShapeModel) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());

    let file = match model {
        ShapeModel::Species(m) => {
            let n3 = 3 * m.n_vertices;
            let dv_name = blob_name(&stem, "dv");
            write_f64_blob(&dir.join(&dv_name), &m.dv)?;
            let mean_name = blob_name(&stem, "pca_mean");
            write_f64_blob(&dir.join(&mean_name), &m.pca.mean)?;
            ModelFile {
                kind: "species".into(),
                template_hash: m.template_hash.clone(),
                n_vertices: m.n_vertices,
                species: vec![m.species.clone()],
                normalization: "raw".into(),
                dv: Some(BlobRef {
                    path: dv_name,
                    rows: n3,
                    cols: 1,
                }),
                basis: Some(write_basis(dir, &stem, "basis", &m.basis)?),
                betas: Some(write_matrix(
                    dir,
                    &stem,
                    "betas",
                    m.basis.ncols,
                    &m.betas,
                )?),
                pca_mean: BlobRef {
                    path: mean_name,
                    rows: n3,
                    cols: 1,
                },
                pca_components: write_basis(dir, &stem, "pca_components", &m.pca.components)?,
                pca_variances: m.pca.variances.clone(),
                coeffs: None,
            }
        }
        ShapeModel::Multi(m) => {
            let n3 = 3 * m.n_vertices;
            let mean_name = blob_name(&stem, "pca_mean");
            write_f64_blob(&dir.join(&mean_name), &m.pca.mean)?;
            ModelFile {
                kind: "multispecies".into(),
                template_hash: m.template_hash.clone(),
                n_vertices: m.n_vertices,
                species: m.species.clone(),
                normalization: if m.normalized {
                    "unit-body-length".into()
                } else {
                    "raw".into()
                },
                dv: None,
                basis: None,
                betas: None,
                pca_mean: BlobRef {
                    path: mean_name,
                    rows: n3,
                    cols: 1,
                },
                pca_components: write_basis(dir, &stem, "pca_components", &m.pca.components)?,
                pca_variances: m.pca.variances.clone(),
                coeffs: Some(write_matrix(
                    dir,
                    &stem,
                    "coeffs",
                    m.pca.components.ncols,
                    &m.coeffs,
                )?),
            }
        }
    };
    atomic_write(path, &json_to_vec(path, &file)?)
}

pub fn load_model(path: &Path) -> Result<ShapeModel> {
    let text = super::read_to_string(path)?;
    let file: ModelFile = json_from_str(path, &text)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let n3 = 3 * file.n_vertices;
    let pca = PcaModel {
        mean: read_f64_blob(&dir.join(&file.pca_mean.path), n3)?,
        components: read_basis(dir, &file.pca_components)?,
        variances: file.pca_variances.clone(),
    };
    pca.validate()?;
    match file.kind.as_str() {
        "species" => {
            let dv_ref = file
                .dv
                .as_ref()
                .ok_or_else(|| Error::parse(path, "species model missing dv"))?;
            let basis_ref = file
                .basis
                .as_ref()
                .ok_or_else(|| Error::parse(path, "species model missing basis"))?;
            let betas_ref = file
                .betas
                .as_ref()
                .ok_or_else(|| Error::parse(path, "species model missing betas"))?;
            Ok(ShapeModel::Species(SpeciesModel {
                species: file.species.first().cloned().unwrap_or_default(),
                template_hash: file.template_hash,
                n_vertices: file.n_vertices,
                dv: read_f64_blob(&dir.join(&dv_ref.path), n3)?,
                basis: read_basis(dir, basis_ref)?,
                betas: read_columns(dir, betas_ref)?,
                pca,
            }))
        }
        "multispecies" => {
            let coeffs_ref = file
                .coeffs
                .as_ref()
                .ok_or_else(|| Error::parse(path, "multispecies model missing coeffs"))?;
            Ok(ShapeModel::Multi(MultiSpeciesModel {
                template_hash: file.template_hash,
                n_vertices: file.n_vertices,
                species: file.species,
                pca,
                coeffs: read_columns(dir, coeffs_ref)?,
                normalized: file.normalization == "unit-body-length",
            }))
        }
        other => Err(Error::parse(path, format!("unknown model kind `{other}`"))),
    }
}
