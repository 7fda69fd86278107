//! Binary checkpoint format.
//!
//! ```text
//! "CRYM" | version u16 | config_len u32 | config text (key = value lines, incl. arch)
//! | entry_count u32 | entries...
//! entry: name_len u32 | name | ndim u32 | dims u32 × ndim | f64 × numel
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{parse_kv_lines, Arch, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CRYM";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = format!("arch = {}\n{}", model.arch, model.config.to_kv_text());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let entries = model.store.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::CorruptCheckpoint("config is not UTF-8".into()))?;
    let corrupt = |e: Error| Error::CorruptCheckpoint(e.to_string());
    let mut arch = None;
    let mut config = ModelConfig::default();
    for (k, v) in parse_kv_lines(text).map_err(corrupt)? {
        if k == "arch" {
            arch = Some(v.parse::<Arch>().map_err(corrupt)?);
        } else {
            config.set(&k, &v).map_err(corrupt)?;
        }
    }
    let arch = arch.ok_or_else(|| Error::CorruptCheckpoint("missing arch".into()))?;
    let mut model = Model::build(arch, &config, 0).map_err(corrupt)?;
    let count = r.u32()?;
    if count != model.store.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{count} entries, architecture has {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| Error::CorruptCheckpoint("bad entry name".into()))?;
        let id = model
            .store
            .id(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown entry '{name}'")))?;
        let ndim = r.u32()?;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if dims != model.store.value(id).shape() {
            return Err(Error::CorruptCheckpoint(format!("shape of '{name}' is {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        model.store.set(id, Tensor::new(dims, data).map_err(corrupt)?)?;
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Load and insist that the stored config equals `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let diff = model.config.diff(expected);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff.join("; ")));
    }
    Ok(model)
}
