//! Binary checkpoint: magic, format version, length-prefixed JSON manifest,
//! then every parameter as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{layout, QNetwork, Variant};
use super::params::TensorSpec;
use super::QnetError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PPQNET\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    variant: Variant,
    param_count: usize,
    tensors: Vec<TensorSpec>,
}

fn io(e: std::io::Error) -> QnetError {
    QnetError::Checkpoint(e.to_string())
}

pub fn save_checkpoint(net: &QNetwork, path: &Path) -> Result<(), QnetError> {
    let manifest = Manifest { variant: net.variant, param_count: net.params.len(), tensors: layout().tensors.clone() };
    let json = serde_json::to_vec(&manifest).map_err(|e| QnetError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * net.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &net.params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<QNetwork, QnetError> {
    let mut buf = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut buf).map_err(io)?;
    let bad = |m: &str| QnetError::Checkpoint(m.to_string());
    if buf.len() < 20 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(QnetError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let json = buf.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| QnetError::Checkpoint(e.to_string()))?;
    if manifest.tensors != layout().tensors || manifest.param_count != layout().total {
        return Err(bad("architecture mismatch"));
    }
    let body = &buf[20 + len..];
    if body.len() != 8 * manifest.param_count {
        return Err(bad("parameter block has wrong length"));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    QNetwork::from_params(manifest.variant, params)
}
