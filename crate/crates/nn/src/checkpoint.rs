//! Checkpoint directories: `architecture.json` (model kind, spec, epoch,
//! loss history), `manifest.json` (tensor shapes, files and SHA-256
//! digests) and one raw little-endian `f32` file per tensor under
//! `tensors/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::layers::Param;
use crate::real::Real;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tensor {name}: hash mismatch")]
    HashMismatch { name: String },
    #[error("tensor {name}: expected {expected} values, found {found}")]
    SizeMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("tensor {0} present in checkpoint but not in the model")]
    Unexpected(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: String, found: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub kind: String,
    pub spec: serde_json::Value,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: ArchitectureDescriptor,
    pub tensors: Vec<NamedTensor>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn to_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn from_params<'a, T: Real>(
        architecture: ArchitectureDescriptor,
        params: impl IntoIterator<Item = &'a Param<T>>,
    ) -> Self {
        let tensors = params
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.value.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Self {
            architecture,
            tensors,
        }
    }

    /// Copies stored values into `params` by name; every model tensor must
    /// be present with a matching size and no extra tensors are allowed.
    pub fn load_into<'a, T: Real>(
        &self,
        params: impl IntoIterator<Item = &'a mut Param<T>>,
    ) -> Result<(), CheckpointError> {
        let mut used = 0;
        for p in params {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| CheckpointError::Missing(p.name.clone()))?;
            if t.data.len() != p.len() || t.shape != p.shape {
                return Err(CheckpointError::SizeMismatch {
                    name: p.name.clone(),
                    expected: p.len(),
                    found: t.data.len(),
                });
            }
            p.value = t.data.iter().map(|&v| T::of(v as f64)).collect();
            p.zero_grad();
            used += 1;
        }
        if used != self.tensors.len() {
            let extra = self.tensors.len() - used;
            return Err(CheckpointError::Unexpected(format!("{extra} tensor(s)")));
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.architecture.kind != kind {
            return Err(CheckpointError::WrongKind {
                expected: kind.into(),
                found: self.architecture.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        fs::create_dir_all(dir.join("tensors"))?;
        let mut records = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let bytes = to_le_bytes(&t.data);
            let file = format!("tensors/{}.f32", t.name);
            fs::write(dir.join(&file), &bytes)?;
            records.push(TensorRecord {
                name: t.name.clone(),
                shape: t.shape.clone(),
                file,
                sha256: sha256_hex(&bytes),
            });
        }
        fs::write(
            dir.join("architecture.json"),
            serde_json::to_string_pretty(&self.architecture)?,
        )?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&records)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let architecture: ArchitectureDescriptor =
            serde_json::from_slice(&fs::read(dir.join("architecture.json"))?)?;
        let records: Vec<TensorRecord> = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let mut tensors = Vec::with_capacity(records.len());
        for r in records {
            let bytes = fs::read(dir.join(&r.file))?;
            if sha256_hex(&bytes) != r.sha256 {
                return Err(CheckpointError::HashMismatch { name: r.name });
            }
            let expected: usize = r.shape.iter().product();
            if bytes.len() != expected * 4 {
                return Err(CheckpointError::SizeMismatch {
                    name: r.name,
                    expected,
                    found: bytes.len() / 4,
                });
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(NamedTensor {
                name: r.name,
                shape: r.shape,
                data,
            });
        }
        Ok(Self {
            architecture,
            tensors,
        })
    }
}
