//! Portable checkpoint encoding.
//!
//! ```text
//! offset  size   field
//! 0       8      magic  b"TINYLMCK"
//! 8       4      format version, u32 little-endian (currently 1)
//! 12      4      header length H, u32 little-endian
//! 16      H      model config as UTF-8 JSON
//! 16+H    8      parameter count N, u64 little-endian
//! 24+H    8·N    parameters, f64 little-endian
//! ```

use std::path::Path;

use super::{ModelConfig, TinyLM};
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

pub const MAGIC: &[u8; 8] = b"TINYLMCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &TinyLM) -> Vec<u8> {
    let header = serde_json::to_vec(model.config()).expect("model config serializes");
    let params = model.params().as_slice();
    let mut out = Vec::with_capacity(24 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<TinyLM> {
    let b = &mut bytes;
    if take(b, 8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(take(b, 4, "header length")?.try_into().unwrap()) as usize;
    let config: ModelConfig =
        serde_json::from_slice(take(b, hlen, "header")?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let n = u64::from_le_bytes(take(b, 8, "parameter count")?.try_into().unwrap()) as usize;
    let raw = take(b, n.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad count".into()))?, "parameters")?;
    if !b.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", b.len())));
    }
    let params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    TinyLM::from_params(config, ParamVector::from(params))
}

pub fn save(model: &TinyLM, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TinyLM> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
