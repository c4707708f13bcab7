//! IDX (MNIST-style) image and label files.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn expect_payload(bytes: &[u8], header: usize, payload: usize, path: &Path) -> Result<()> {
    let want = header + payload;
    if bytes.len() < want {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: expected {want} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > want {
        return Err(format_err(path, want, "trailing bytes after payload"));
    }
    Ok(())
}

/// Loads an IDX image/label pair. Images become `[n, rows, cols, 1]` in
/// `[0, 1]`. Ten classes are assumed unless a label is 10 or larger.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = read_file(images)?;
    let magic = read_u32(&ib, 0, images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(images, 0, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(&ib, 4, images)? as usize;
    let rows = read_u32(&ib, 8, images)? as usize;
    let cols = read_u32(&ib, 12, images)? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(format_err(images, 4, "zero-sized dimension"));
    }
    expect_payload(&ib, 16, n * rows * cols, images)?;

    let lb = read_file(labels)?;
    let magic = read_u32(&lb, 0, labels)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(labels, 0, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let ln = read_u32(&lb, 4, labels)? as usize;
    if ln != n {
        return Err(format_err(labels, 4, format!("{ln} labels for {n} images")));
    }
    expect_payload(&lb, 8, n, labels)?;

    let pixels: Vec<f64> = ib[16..].iter().map(|&p| f64::from(p) / 255.0).collect();
    let label_vec: Vec<usize> = lb[8..].iter().map(|&l| usize::from(l)).collect();
    let classes = label_vec.iter().max().map_or(10, |&m| (m + 1).max(10));
    let inputs = Tensor::new(vec![n, rows, cols, 1], pixels)?;
    Dataset::new(inputs, label_vec, classes, format!("idx:{}", images.display()))
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn loads_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 4 * 3).map(|i| (i * 11) as u8).chain([]).collect();
        let mut pixels = pixels;
        pixels[5] = 255;
        let im = write(dir.path(), "im", &encode_idx_images(4, 3, &pixels));
        let lb = write(dir.path(), "lb", &encode_idx_labels(&[7, 2]));
        let ds = load_idx(&im, &lb).unwrap();
        assert_eq!(ds.inputs().shape(), &[2, 4, 3, 1]);
        assert_eq!(ds.labels(), &[7, 2]);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.inputs().data()[5], 1.0);
        assert_eq!(ds.inputs().data()[1], 11.0 / 255.0);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let good_im = encode_idx_images(2, 2, &[0; 8]);
        let good_lb = encode_idx_labels(&[0, 1]);

        let mut bad_magic = good_im.clone();
        bad_magic[3] = 0x01;
        let im = write(dir.path(), "bad_magic", &bad_magic);
        let lb = write(dir.path(), "lb", &good_lb);
        match load_idx(&im, &lb) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }

        let im = write(dir.path(), "trunc", &good_im[..good_im.len() - 1]);
        match load_idx(&im, &lb) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 23),
            other => panic!("{other:?}"),
        }

        let im = write(dir.path(), "im", &good_im);
        let lb3 = write(dir.path(), "lb3", &encode_idx_labels(&[0, 1, 2]));
        assert!(matches!(load_idx(&im, &lb3), Err(Error::Format { offset: 4, .. })));

        let swapped = write(dir.path(), "swapped", &good_lb);
        assert!(load_idx(&swapped, &lb).is_err());
        assert!(load_idx(&dir.path().join("missing"), &lb).is_err());
    }
}
