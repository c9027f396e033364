//! Binary parameter files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"SSPD"  u32 version  u32 descriptor_dim  u32 layer_count
//! per layer: u32 name_len, name (UTF-8), u32 rank, rank x u64 dims,
//!            prod(dims) x f64 row-major data
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{DescriptorParams, Layer};

pub const MAGIC: &[u8; 4] = b"SSPD";
pub const VERSION: u32 = 1;

pub fn encode(params: &DescriptorParams<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.descriptor_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        out.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
        out.extend_from_slice(l.name.as_bytes());
        out.extend_from_slice(&(l.shape.len() as u32).to_le_bytes());
        for &d in &l.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &l.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<DescriptorParams<f64>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = r.u32("descriptor_dim")? as usize;
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for li in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "layer name")?)
            .map_err(|_| Error::Format(format!("layer {li} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("{name}: shape {shape:?} overflows")))?;
        let bytes = r.take(n, &name)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        layers.push(Layer { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let params = DescriptorParams::from_layers(layers)?;
    if params.descriptor_dim() != dim {
        return Err(Error::Shape(format!(
            "header says descriptor_dim {dim}, layers produce {}",
            params.descriptor_dim()
        )));
    }
    if let Some(l) = params.layers.iter().find(|l| l.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::Format(format!("{} holds non-finite values", l.name)));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &DescriptorParams<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<DescriptorParams<f64>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

/// Loads and checks the descriptor width against the expected one.
pub fn load_checkpoint_expecting(path: &Path, descriptor_dim: usize) -> Result<DescriptorParams<f64>> {
    let p = load_checkpoint(path)?;
    if p.descriptor_dim() != descriptor_dim {
        return Err(Error::Shape(format!(
            "checkpoint descriptor_dim {} does not match configured {descriptor_dim}",
            p.descriptor_dim()
        )));
    }
    Ok(p)
}
