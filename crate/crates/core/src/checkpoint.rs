//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SUSLCKPT"
//! version    u32      1
//! config     u32 length + UTF-8 JSON of the ModelConfig
//! metadata   u32 length + UTF-8 free text (the resolved run spec)
//! tensors    u32 count, then per tensor:
//!              u32 name length + name, u32 rank, u64 per extent,
//!              f64 values in row-major order
//! ```
//!
//! Values are stored as raw bit patterns, so save/load is bit-exact and
//! saving the same parameters twice yields identical files.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::diff::Array;
use crate::model::{ModelConfig, ModelError, Parameters};

const MAGIC: &[u8; 8] = b"SUSLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn encode(params: &Parameters, metadata: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_string(params.config()).expect("model config serializes");
    put_bytes(&mut out, config.as_bytes());
    put_bytes(&mut out, metadata.as_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (spec, t) in params.specs().iter().zip(params.tensors()) {
        put_bytes(&mut out, spec.name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
}

/// Parameters and metadata from encoded bytes.
pub fn decode(bytes: &[u8]) -> Result<(Parameters, String), CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
    }
    let config: ModelConfig =
        serde_json::from_str(&r.string()?).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    let metadata = r.string()?;
    let layout = config.parameter_layout();
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(CheckpointError::Corrupt(format!("{count} tensors, layout expects {}", layout.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for spec in &layout {
        let name = r.string()?;
        if name != spec.name {
            return Err(CheckpointError::Corrupt(format!("tensor {name:?} where {:?} was expected", spec.name)));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape != spec.shape {
            return Err(ModelError::ParameterShape { name, expected: spec.shape.clone(), got: shape }.into());
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
        tensors.push(Array::new(shape, data).map_err(ModelError::Diff)?);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok((Parameters::from_tensors(config, tensors)?, metadata))
}

pub fn save(path: &Path, params: &Parameters, metadata: &str) -> Result<(), CheckpointError> {
    fs::write(path, encode(params, metadata))
        .map_err(|e| CheckpointError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn load(path: &Path) -> Result<(Parameters, String), CheckpointError> {
    let bytes =
        fs::read(path).map_err(|e| CheckpointError::Io { path: path.display().to_string(), message: e.to_string() })?;
    decode(&bytes)
}
