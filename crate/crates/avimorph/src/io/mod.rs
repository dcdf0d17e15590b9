//! File formats: OBJ meshes, template sidecars, PGM masks, dataset
//! manifests, model files (JSON headers + raw little-endian f64 blobs),
//! per-instance parameter records, key=value configs, CSV/SVG reports.
//!
//! All writers go through `atomic_write` (temp file + rename) and every
//! float64 payload round-trips bit-exactly.

mod blob;
mod config;
mod manifest;
mod model;
mod obj;
mod params;
mod pgm;
mod report;
mod template;

pub use blob::{read_f64_blob, write_f64_blob};
pub use config::Config;
pub use manifest::{load_manifest, save_manifest, Manifest};
pub use model::{load_model, save_model, ModelFile};
pub use obj::{read_obj, write_obj};
pub use params::{load_params, save_params, ParamsRecord};
pub use pgm::{read_mask_pgm, write_mask_pgm, write_softmask_pgm};
pub use report::{
    read_traits_csv, write_embedding_csv, write_lambda_csv, write_metrics_csv, write_svg_scatter,
    write_trace_csv, write_traits_csv, MetricsRow,
};
pub use template::{load_template, save_template, template_hash};

use crate::error::{Error, Result};
use std::path::Path;

/// Write via a temp file in the same directory, then rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn json_from_str<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
}

pub(crate) fn json_to_vec<T: serde::Serialize>(path: &Path, value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| Error::parse(path, e.to_string()))
}
