//! Grayscale heatmaps as binary PGM (P5).

use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::attention::{AttnError, Matrix};

/// Min-max scales `slice` to 0..=255. A constant slice maps to 128.
pub fn heatmap_pixels(slice: &Matrix) -> Result<Vec<u8>, AttnError> {
    if !slice.is_finite() {
        return Err(AttnError::NonFiniteInput);
    }
    let data = slice.as_slice();
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 || !range.is_finite() {
        return Ok(vec![128; data.len()]);
    }
    Ok(data
        .iter()
        .map(|v| ((v - min) / range * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Encodes `slice` (rows = image height) as an 8-bit P5 image.
pub fn encode_pgm(slice: &Matrix) -> Result<Vec<u8>, AttnError> {
    let pixels = heatmap_pixels(slice)?;
    let mut out = format!("P5\n{} {}\n255\n", slice.cols(), slice.rows()).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

pub fn render_heatmap(slice: &Matrix, path: &Path) -> io::Result<()> {
    let bytes = encode_pgm(slice).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    write_atomic(path, &bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_endpoints() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(heatmap_pixels(&m).unwrap(), [0, 255, 255, 0]);
        let pgm = encode_pgm(&m).unwrap();
        assert_eq!(&pgm[..11], b"P5\n2 2\n255\n");
        assert_eq!(&pgm[11..], &[0, 255, 255, 0]);
    }

    #[test]
    fn constant_is_mid_gray() {
        let m = Matrix::from_rows(&vec![vec![3.5; 3]; 2]).unwrap();
        assert_eq!(heatmap_pixels(&m).unwrap(), [128; 6]);
    }

    #[test]
    fn header_uses_width_then_height() {
        let m = Matrix::zeros(2, 3);
        assert!(encode_pgm(&m).unwrap().starts_with(b"P5\n3 2\n255\n"));
    }

    #[test]
    fn rejects_nan() {
        let m = Matrix::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert!(heatmap_pixels(&m).is_err());
    }

    #[test]
    fn atomic_write_and_bad_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        render_heatmap(&Matrix::zeros(1, 1), &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"P5\n1 1\n255\n\x80");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(render_heatmap(&Matrix::zeros(1, 1), &dir.path().join("missing/x.pgm")).is_err());
    }

    #[test]
    fn sha_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
