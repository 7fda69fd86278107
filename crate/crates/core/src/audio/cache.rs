//! Feature cache: `"CRYF" | version u8 | C u32 | T u32 | C·T f64`, little-endian,
//! row-major by coefficient.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CRYF";
pub const CACHE_VERSION: u8 = 1;
pub const CACHE_EXTENSION: &str = "cryf";

/// `<cache>/<label>/<stem>.cryf`
pub fn cache_path(cache_dir: &Path, label: &str, stem: &str) -> PathBuf {
    cache_dir.join(label).join(format!("{stem}.{CACHE_EXTENSION}"))
}

pub fn write_feature_cache(path: &Path, values: &Tensor) -> Result<()> {
    let shape = values.shape();
    if shape.len() != 2 {
        return Err(Error::shape("write_feature_cache", format!("expected C×T, got {shape:?}")));
    }
    let mut out = Vec::with_capacity(13 + 8 * values.numel());
    out.extend_from_slice(MAGIC);
    out.push(CACHE_VERSION);
    out.extend_from_slice(&(shape[0] as u32).to_le_bytes());
    out.extend_from_slice(&(shape[1] as u32).to_le_bytes());
    for v in values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<Tensor> {
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let buf = fs::read(path)?;
    if buf.len() < 13 || &buf[..4] != MAGIC {
        return Err(Error::CorruptCache(format!("{}: bad header", path.display())));
    }
    if buf[4] != CACHE_VERSION {
        return Err(Error::CorruptCache(format!("{}: version {}", path.display(), buf[4])));
    }
    let c = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(buf[9..13].try_into().unwrap()) as usize;
    let body = &buf[13..];
    if c == 0 || t == 0 || body.len() != c * t * 8 {
        return Err(Error::CorruptCache(format!("{}: {c}×{t} does not match {} bytes", path.display(), body.len())));
    }
    let data = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Tensor::new(vec![c, t], data)
}
