//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "BDCKPT01"
//! hlen    u32      length of the JSON header in bytes
//! header  hlen     UTF-8 JSON: {"kind", "config", "tensors": [{"name", "shape"}]}
//! data             f32 values of every tensor, in header order, row-major
//! ```

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BDCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model family, e.g. `decomposer` or `predictor`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(kind: &str, config: &serde_json::Value, store: &ParamStore) -> Result<Vec<u8>> {
    let all = store.all();
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config: config.clone(),
        tensors: all
            .iter()
            .map(|(n, v)| TensorEntry {
                name: n.clone(),
                shape: v.dims().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, v) in &all {
        let vals: Vec<f32> = v.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
        for x in vals {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the header and returns it with the byte offset of the data.
pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("missing BDCKPT01 magic".into()));
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let end = 12 + hlen;
    if bytes.len() < end {
        return Err(NetError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..end])?;
    Ok((header, end))
}

/// Copies every tensor of the container into `store`; names and shapes must
/// match exactly.
pub fn load_into(bytes: &[u8], expected_kind: &str, store: &ParamStore) -> Result<CheckpointHeader> {
    let (header, mut off) = decode_header(bytes)?;
    if header.kind != expected_kind {
        return Err(NetError::Config(format!(
            "checkpoint holds a {} model, expected {expected_kind}",
            header.kind
        )));
    }
    let model_names: Vec<String> = store.all().into_iter().map(|(n, _)| n).collect();
    let file_names: Vec<String> = header.tensors.iter().map(|t| t.name.clone()).collect();
    if model_names != file_names {
        return Err(NetError::Config(format!(
            "checkpoint tensors do not match the model ({} in file, {} in model)",
            file_names.len(),
            model_names.len()
        )));
    }
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let len = n * 4;
        if bytes.len() < off + len {
            return Err(NetError::Checkpoint(format!("data for {} is truncated", t.name)));
        }
        let vals: Vec<f32> = bytes[off..off + len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.assign(&t.name, &t.shape, vals)?;
        off += len;
    }
    if off != bytes.len() {
        return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok(header)
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(decode_header(&std::fs::read(path)?)?.0)
}
