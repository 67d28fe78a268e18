//! IDX binary files (the MNIST / FashionMNIST distribution format).
//!
//! Layout: a big-endian magic `0x0000 TT DD` where `TT = 0x08` (unsigned
//! bytes) and `DD` is the number of dimensions, then `DD` big-endian `u32`
//! sizes, then the raw payload. Gzip-compressed files are detected by their
//! `1f 8b` prefix and decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path.display().to_string(), format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxArray<'a> {
    dims: Vec<usize>,
    payload: &'a [u8],
}

fn parse<'a>(bytes: &'a [u8], expected_magic: u32, context: &str) -> Result<IdxArray<'a>> {
    if bytes.len() < 4 {
        return Err(Error::format(context, "file shorter than the IDX magic"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(Error::format(
            context,
            format!("wrong magic number {magic:#010x} (expected {expected_magic:#010x})"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format(context, "truncated dimension header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: payload.len(),
        });
    }
    Ok(IdxArray { dims, payload })
}

/// Loads an image/label IDX pair.
///
/// Images are flattened row-major and scaled by 1/255. The class count is
/// one more than the largest label present.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = read_file(images_path)?;
    let lbl_bytes = read_file(labels_path)?;
    let images = parse(&img_bytes, IMAGES_MAGIC, &images_path.display().to_string())?;
    let labels = parse(&lbl_bytes, LABELS_MAGIC, &labels_path.display().to_string())?;

    let n_images = images.dims[0];
    let n_labels = labels.dims[0];
    if n_images != n_labels {
        return Err(Error::LengthMismatch {
            expected: n_images,
            actual: n_labels,
        });
    }
    let input_dim: usize = images.dims[1..].iter().product();
    let features = images.payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, input_dim, num_classes)
}

/// Writes an uncompressed `u8` image file with shape `(n, rows, cols)`.
pub fn write_idx_images<W: Write>(
    mut out: W,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> std::io::Result<()> {
    let n = pixels.len() / (rows * cols).max(1);
    out.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    for d in [n, rows, cols] {
        out.write_all(&(d as u32).to_be_bytes())?;
    }
    out.write_all(pixels)
}

pub fn write_idx_labels<W: Write>(mut out: W, labels: &[u8]) -> std::io::Result<()> {
    out.write_all(&LABELS_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use tempfile::TempDir;

    fn fixture(dir: &TempDir, pixels: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        let mut ib = Vec::new();
        write_idx_images(&mut ib, 2, 2, pixels).unwrap();
        fs::write(&ip, ib).unwrap();
        let mut lb = Vec::new();
        write_idx_labels(&mut lb, labels).unwrap();
        fs::write(&lp, lb).unwrap();
        (ip, lp)
    }

    #[test]
    fn two_image_fixture_scales_pixels() {
        let dir = TempDir::new().unwrap();
        let (ip, lp) = fixture(&dir, &[0, 255, 255, 0, 255, 0, 0, 255], &[1, 0]);
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.input_dim(), 4);
        assert_eq!(d.row(0), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(d.labels(), &[1, 0]);
        assert!(d.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn gzip_is_detected() {
        let dir = TempDir::new().unwrap();
        let (ip, lp) = fixture(&dir, &[10, 20, 30, 40], &[3]);
        let raw = fs::read(&ip).unwrap();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = dir.path().join("img.idx.gz");
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx(&gz, &lp).unwrap(), load_idx(&ip, &lp).unwrap());
    }

    #[test]
    fn wrong_magic_names_the_value() {
        let dir = TempDir::new().unwrap();
        let (ip, lp) = fixture(&dir, &[0; 4], &[0]);
        let err = load_idx(&lp, &ip).unwrap_err().to_string();
        assert!(err.contains("0x00000801"), "{err}");
    }

    #[test]
    fn label_count_mismatch() {
        let dir = TempDir::new().unwrap();
        let (ip, lp) = fixture(&dir, &[0; 8], &[0]);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn truncated_payload() {
        let dir = TempDir::new().unwrap();
        let (ip, lp) = fixture(&dir, &[0; 8], &[0, 1]);
        let mut raw = fs::read(&ip).unwrap();
        raw.pop();
        fs::write(&ip, raw).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn parse_then_reserialize_is_byte_identical() {
        let dir = TempDir::new().unwrap();
        let pixels: Vec<u8> = (0..=255u8).chain(0..=255u8).take(12).collect();
        let (ip, lp) = fixture(&dir, &pixels, &[7, 2, 9]);
        let d = load_idx(&ip, &lp).unwrap();
        let back: Vec<u8> = d.features().iter().map(|v| (v * 255.0).round() as u8).collect();
        let mut ib = Vec::new();
        write_idx_images(&mut ib, 2, 2, &back).unwrap();
        assert_eq!(ib, fs::read(&ip).unwrap());
        let labels: Vec<u8> = d.labels().iter().map(|&l| l as u8).collect();
        let mut lb = Vec::new();
        write_idx_labels(&mut lb, &labels).unwrap();
        assert_eq!(lb, fs::read(&lp).unwrap());
    }
}
