//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "LCMT" | version | config_len | config (UTF-8 key = value lines)
//! | n_params | { name_len | name | rank | dims... | f32 payload, row-major }*
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, TransformerModel};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCMT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn write_checkpoint<T: Scalar>(w: &mut impl Write, config: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION as usize)?;
    let cfg = config.to_kv();
    put_u32(w, cfg.len())?;
    w.write_all(cfg.as_bytes())?;
    put_u32(w, params.len())?;
    for (name, t) in params.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(r: &mut impl Read) -> Result<(ModelConfig, ParamStore<T>)> {
    let magic = get_bytes(r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = get_u32(r)?;
    let cfg_text = String::from_utf8(get_bytes(r, cfg_len)?).map_err(|e| Error::Format(e.to_string()))?;
    let config = ModelConfig::from_kv(&cfg_text)?;
    let n = get_u32(r)?;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name_len = get_u32(r)?;
        let name = String::from_utf8(get_bytes(r, name_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let rank = get_u32(r)?;
        let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = get_bytes(r, count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        params.insert(name, Tensor::new(dims, data)?);
    }
    Ok((config, params))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &TransformerModel<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model.config(), model.params())?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<TransformerModel<T>> {
    let bytes = std::fs::read(path)?;
    let (config, params) = read_checkpoint(&mut bytes.as_slice())?;
    TransformerModel::from_params(config, params)
}
