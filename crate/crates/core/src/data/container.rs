//! Versioned little-endian dataset container.
//!
//! ```text
//! magic "WDDS" | version u32 | ndim u32 | dims u32*ndim | num_classes u32
//! | provenance_len u32 | provenance utf-8 | labels u32*n | values f64*len
//! ```

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CONTAINER_MAGIC: [u8; 4] = *b"WDDS";
pub const CONTAINER_VERSION: u32 = 1;

pub fn write_container(ds: &Dataset, path: &Path) -> Result<()> {
    let shape = ds.inputs().shape();
    let mut out = Vec::with_capacity(32 + ds.len() * 4 + ds.inputs().len() * 8);
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(ds.num_classes() as u32).to_le_bytes());
    let prov = ds.provenance().as_bytes();
    out.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    out.extend_from_slice(prov);
    for &l in ds.labels() {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &v in ds.inputs().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            path: self.path.display().to_string(),
            offset: self.pos as u64,
            message: format!("truncated: need {n} more bytes"),
        })?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            offset: offset as u64,
            message: message.into(),
        }
    }
}

pub fn read_container(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CONTAINER_MAGIC {
        return Err(r.err(0, "bad magic"));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let ndim = r.u32()? as usize;
    if !(2..=8).contains(&ndim) {
        return Err(r.err(8, format!("bad rank {ndim}")));
    }
    let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let classes = r.u32()? as usize;
    let plen = r.u32()? as usize;
    let prov_at = r.pos;
    let provenance = String::from_utf8(r.take(plen)?.to_vec()).map_err(|_| r.err(prov_at, "provenance is not utf-8"))?;
    let n = shape[0];
    let labels = (0..n).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let values: Vec<f64> = r
        .take(len * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes"));
    }
    Dataset::new(Tensor::new(shape, values)?, labels, classes, provenance)
}
