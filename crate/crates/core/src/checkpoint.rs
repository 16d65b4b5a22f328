//! Versioned checkpoint files: magic bytes, format version, a JSON header
//! and a little-endian `f32` tensor payload.
//!
//! ```text
//! b"KWSCKPT\0" | u32 version | u64 header length | header JSON | payload
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

pub const MAGIC: &[u8; 8] = b"KWSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Embedder,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in elements.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub seed: u64,
    pub epoch: usize,
    /// Non-blank phoneme symbols in ID order.
    pub inventory: Vec<String>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default)]
    pub metrics: serde_json::Value,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointHeader {
    pub fn new(kind: CheckpointKind, seed: u64, epoch: usize, inventory: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            seed,
            epoch,
            inventory,
            config,
            lexicon: None,
            fallback: None,
            metrics: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: TensorMap,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.format_version = FORMAT_VERSION;
        header.tensors.clear();
        let mut offset = 0u64;
        for (name, (shape, data)) in &self.tensors {
            if shape.iter().product::<usize>() != data.len() {
                return Err(KwsError::Checkpoint(format!("tensor {name}: shape {shape:?} vs {} values", data.len())));
            }
            header.tensors.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            });
            offset += data.len() as u64;
        }
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in self.tensors.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| KwsError::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let payload = &bytes[20 + len..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values".into()));
        }
        let total = payload.len() / 4;
        let mut tensors = TensorMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            if start + n > total {
                return Err(bad(format!("tensor {} runs past the payload", e.name)));
            }
            let data = payload[start * 4..(start + n) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(e.name.clone(), (e.shape.clone(), data));
        }
        Ok(Self { header, tensors })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| KwsError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| KwsError::io(&tmp, e))?;
        f.sync_all().map_err(|e| KwsError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| KwsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| KwsError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Tensors whose names start with `prefix.`, with the prefix removed.
    pub fn sub_tensors(&self, prefix: &str) -> TensorMap {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }
}
