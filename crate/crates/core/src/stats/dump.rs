//! Activation dump container: a little-endian u64 giving the byte length of
//! a JSON index, the index itself, then raw little-endian f32 blocks, one
//! per (trace, layer). Index offsets are relative to the first data byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ActivationTrace;
use crate::modelio::cache::write_atomic;

pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dump: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub sample_id: String,
    pub variant_id: String,
    pub layer_count: usize,
    pub dims: Vec<usize>,
    pub offsets: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Index {
    version: u32,
    entries: Vec<DumpEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub traces: Vec<ActivationTrace>,
    /// Free-form producer metadata (model, pooling, layer selection).
    pub meta: serde_json::Value,
}

impl ActivationDump {
    pub fn get(&self, sample_id: &str, variant_id: &str) -> Option<&ActivationTrace> {
        self.traces
            .iter()
            .find(|t| t.sample_id == sample_id && t.variant_id == variant_id)
    }
}

pub fn write_dump(path: &Path, traces: &[ActivationTrace], meta: serde_json::Value) -> Result<(), DumpError> {
    let mut data = Vec::new();
    let mut entries = Vec::with_capacity(traces.len());
    for t in traces {
        let mut offsets = Vec::with_capacity(t.layers.len());
        for layer in &t.layers {
            offsets.push(data.len() as u64);
            for v in layer {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        entries.push(DumpEntry {
            sample_id: t.sample_id.clone(),
            variant_id: t.variant_id.clone(),
            layer_count: t.layers.len(),
            dims: t.dims(),
            offsets,
        });
    }
    let index = serde_json::to_vec(&Index {
        version: DUMP_VERSION,
        entries,
        meta,
    })
    .expect("index serializes");
    let mut out = Vec::with_capacity(8 + index.len() + data.len());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&data);
    write_atomic(path, &out).map_err(|source| DumpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_dump(path: &Path) -> Result<ActivationDump, DumpError> {
    let bytes = fs::read(path).map_err(|source| DumpError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |m: &str| DumpError::Malformed(m.to_string());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated header"))?.try_into().expect("8 bytes");
    let index_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("index length overflow"))?;
    let index_end = 8usize.checked_add(index_len).ok_or_else(|| bad("index length overflow"))?;
    let index_bytes = bytes.get(8..index_end).ok_or_else(|| bad("truncated index"))?;
    let index: Index = serde_json::from_slice(index_bytes).map_err(|e| DumpError::Malformed(e.to_string()))?;
    if index.version != DUMP_VERSION {
        return Err(DumpError::Malformed(format!("unsupported version {}", index.version)));
    }
    let data = &bytes[index_end..];
    let mut traces = Vec::with_capacity(index.entries.len());
    for e in index.entries {
        if e.dims.len() != e.layer_count || e.offsets.len() != e.layer_count {
            return Err(DumpError::Malformed(format!(
                "{}/{}: layer_count disagrees with dims/offsets",
                e.sample_id, e.variant_id
            )));
        }
        let mut layers = Vec::with_capacity(e.layer_count);
        for (&dim, &off) in e.dims.iter().zip(&e.offsets) {
            let start = usize::try_from(off).map_err(|_| bad("offset overflow"))?;
            let end = dim
                .checked_mul(4)
                .and_then(|n| start.checked_add(n))
                .ok_or_else(|| bad("block size overflow"))?;
            let block = data.get(start..end).ok_or_else(|| {
                DumpError::Malformed(format!("{}/{}: block out of range", e.sample_id, e.variant_id))
            })?;
            layers.push(
                block
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            );
        }
        traces.push(ActivationTrace {
            sample_id: e.sample_id,
            variant_id: e.variant_id,
            layers,
        });
    }
    Ok(ActivationDump {
        traces,
        meta: index.meta,
    })
}
