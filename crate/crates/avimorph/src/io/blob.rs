//! Raw little-endian f64 array blobs, referenced from JSON headers.

use super::atomic_write;
use crate::error::{Error, Result};
use std::path::Path;

pub fn write_f64_blob(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_f64_blob(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len * 8 {
        return Err(Error::parse(
            path,
            format!("blob has {} bytes, expected {}", bytes.len(), expected_len * 8),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
