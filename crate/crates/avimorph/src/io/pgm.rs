//! Binary PGM (P5, maxval 255) masks. Codec-free and bit-exact for
//! binary payloads; soft masks can be dumped for debugging (x255,
//! rounded, lossy by design).

use super::atomic_write;
use crate::error::{Error, Result};
use crate::render::{Mask, SoftMask};
use std::path::Path;

pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend(mask.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    atomic_write(path, &bytes)
}

pub fn write_softmask_pgm(path: &Path, mask: &SoftMask) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend(
        mask.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    atomic_write(path, &bytes)
}

pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and `#` comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::parse(path, "not a P5 PGM"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::parse(path, "bad width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::parse(path, "bad height"))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::parse(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::parse(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if bytes.len() < pos + width * height {
        return Err(Error::parse(path, "truncated PGM raster"));
    }
    Ok(Mask {
        width,
        height,
        data: bytes[pos..pos + width * height]
            .iter()
            .map(|&b| u8::from(b >= 128))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut m = Mask::zeros(7, 5);
        for (i, v) in m.data.iter_mut().enumerate() {
            *v = u8::from(i % 3 == 0);
        }
        write_mask_pgm(&path, &m).unwrap();
        let back = read_mask_pgm(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn reads_headers_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 255, 0]);
        std::fs::write(&path, &bytes).unwrap();
        let m = read_mask_pgm(&path).unwrap();
        assert_eq!(m.data, vec![0, 1, 1, 0]);
    }

    #[test]
    fn softmask_dump_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        let s = SoftMask {
            width: 2,
            height: 1,
            data: vec![0.25, 1.0],
        };
        write_softmask_pgm(&path, &s).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let raster = &bytes[bytes.len() - 2..];
        assert_eq!(raster, &[64u8, 255]);
    }
}
