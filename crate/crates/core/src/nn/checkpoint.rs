//! Checkpoint file: `CDCK` magic, little-endian `u64` manifest length, JSON
//! manifest, then every tensor as little-endian `f32` at the recorded byte
//! offset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NnError, Role};
use crate::codes::{CodeDocument, CssCode};

const MAGIC: &[u8; 4] = b"CDCK";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    role: Role,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    code: CodeDocument,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A model together with free-form metadata (training step, basis, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.model.params.len());
        for p in &self.model.params {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                role: p.role,
                offset,
            });
            offset += 4 * p.value.len();
        }
        let manifest = Manifest {
            config: self.model.config.clone(),
            code: CodeDocument::from(&self.model.code),
            tensors,
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.model.params {
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let header = bytes.get(12..12 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(header)?;
        let payload = &bytes[12 + len..];
        let code = CssCode::try_from(manifest.code)?;
        let mut model = Model::<f32>::new(manifest.config, &code)?;
        if manifest.tensors.len() != model.params.len() {
            return Err(bad("tensor count does not match the model"));
        }
        let mut end = 0;
        for (entry, p) in manifest.tensors.iter().zip(model.params.iter_mut()) {
            if entry.name != p.name || entry.shape != p.shape || entry.role != p.role {
                return Err(NnError::Checkpoint(format!("tensor {} does not match the model", entry.name)));
            }
            let bytes = payload
                .get(entry.offset..entry.offset + 4 * p.value.len())
                .ok_or_else(|| bad("truncated payload"))?;
            for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            end = end.max(entry.offset + bytes.len());
        }
        if end != payload.len() {
            return Err(bad("trailing payload bytes"));
        }
        Ok(Self {
            model,
            metadata: manifest.metadata,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, metadata: serde_json::Value) -> Result<(), NnError> {
    let ck = Checkpoint {
        model: model.clone(),
        metadata,
    };
    std::fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
