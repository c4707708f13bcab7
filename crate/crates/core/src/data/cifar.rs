//! CIFAR-10 binary batches: records of 1 label byte + 3072 channel-major pixels.

use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CIFAR10_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const PLANE: usize = 32 * 32;

/// Splits a record into its label and HWC-ordered pixels.
pub fn decode_cifar10_record(record: &[u8]) -> (u8, Vec<u8>) {
    let mut hwc = vec![0u8; 3 * PLANE];
    for ch in 0..3 {
        for p in 0..PLANE {
            hwc[p * 3 + ch] = record[1 + ch * PLANE + p];
        }
    }
    (record[0], hwc)
}

pub fn encode_cifar10_record(label: u8, hwc: &[u8]) -> Vec<u8> {
    let mut rec = vec![0u8; CIFAR10_RECORD_LEN];
    rec[0] = label;
    for ch in 0..3 {
        for p in 0..PLANE {
            rec[1 + ch * PLANE + p] = hwc[p * 3 + ch];
        }
    }
    rec
}

/// Concatenates one or more batch files into a `[n, 32, 32, 3]` dataset in `[0, 1]`.
pub fn load_cifar10_binary(files: &[PathBuf]) -> Result<Dataset> {
    if files.is_empty() {
        return Err(Error::invalid("no CIFAR-10 batch files given"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        check_len(path, bytes.len())?;
        for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD_LEN).enumerate() {
            if rec[0] > 9 {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    offset: (r * CIFAR10_RECORD_LEN) as u64,
                    message: format!("label byte {} out of range", rec[0]),
                });
            }
            let (label, hwc) = decode_cifar10_record(rec);
            labels.push(usize::from(label));
            pixels.extend(hwc.iter().map(|&v| f64::from(v) / 255.0));
        }
    }
    let n = labels.len();
    let inputs = Tensor::new(vec![n, 32, 32, 3], pixels)?;
    let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    Dataset::new(inputs, labels, 10, format!("cifar10:{}", names.join(",")))
}

fn check_len(path: &Path, len: usize) -> Result<()> {
    if len == 0 || !len.is_multiple_of(CIFAR10_RECORD_LEN) {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: (len - len % CIFAR10_RECORD_LEN) as u64,
            message: format!("size {len} is not a positive multiple of {CIFAR10_RECORD_LEN}"),
        });
    }
    Ok(())
}
