//! Self-describing binary checkpoints.
//!
//! Layout: 4-byte magic `G2T1`, little-endian u64 header length, a JSON
//! header (format version, config echo, named tensor table with offsets
//! and content hashes, digests, run metadata), then the raw little-endian
//! tensor payload in table order. Tensors are stored sorted by name and
//! all maps are ordered, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::{digest_named, digest_tensor};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"G2T1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(thiserror::Error, Debug)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unknown checkpoint format version {0}")]
    UnknownVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor `{0}` payload does not match its recorded hash")]
    CorruptTensor(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeadSpec {
    pub name: String,
    pub kind: String,
    pub classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct CheckpointMeta {
    /// Which run produced this: backbone, stage1, stage2, fewshot.
    pub kind: String,
    #[serde(default)]
    pub vocab: Vec<String>,
    #[serde(default)]
    pub heads: Vec<HeadSpec>,
    #[serde(default)]
    pub stats: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    digests: BTreeMap<String, String>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub digests: BTreeMap<String, String>,
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(
        config: serde_json::Value,
        meta: CheckpointMeta,
        tensors: BTreeMap<String, Tensor>,
    ) -> Self {
        let named: Vec<(String, &Tensor)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut digests = BTreeMap::new();
        digests.insert("all".to_string(), digest_named(&named).global);
        Checkpoint {
            config,
            digests,
            meta,
            tensors,
        }
    }

    /// Records a digest over a named subset, e.g. the frozen backbone.
    pub fn record_digest(&mut self, key: &str, value: String) {
        self.digests.insert(key.to_string(), value);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, tensor) in &self.tensors {
            let bytes = tensor.to_le_bytes();
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: tensor.dtype().as_str().to_string(),
                shape: tensor.shape().to_vec(),
                offset: payload.len() as u64,
                hash: digest_tensor(tensor),
            });
            payload.extend(bytes);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            tensors: entries,
            digests: self.digests.clone(),
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(12 + header_bytes.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header_end = 12 + header_len;
        if bytes.len() < header_end {
            return Err(CheckpointError::Malformed("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::UnknownVersion(header.format_version));
        }
        let payload = &bytes[header_end..];

        let mut tensors = BTreeMap::new();
        for entry in &header.tensors {
            let dtype = DType::from_str(&entry.dtype)
                .ok_or_else(|| CheckpointError::Malformed(format!("dtype {}", entry.dtype)))?;
            let width = match dtype {
                DType::F32 => 4,
                DType::F64 => 8,
            };
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + numel * width;
            if payload.len() < end {
                return Err(CheckpointError::Malformed(format!(
                    "tensor `{}` escapes the payload",
                    entry.name
                )));
            }
            let tensor =
                Tensor::from_le_bytes(entry.shape.clone(), dtype, &payload[start..end])
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?
                    .with_dtype(dtype);
            if digest_tensor(&tensor) != entry.hash {
                return Err(CheckpointError::CorruptTensor(entry.name.clone()));
            }
            tensors.insert(entry.name.clone(), tensor);
        }
        Ok(Checkpoint {
            config: header.config,
            digests: header.digests,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Clones a named listing into an owned map, the usual step before
/// building a checkpoint from live parameters.
pub fn collect_tensors(named: &[(String, &Tensor)]) -> BTreeMap<String, Tensor> {
    named
        .iter()
        .map(|(n, t)| (n.clone(), (*t).clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> Checkpoint {
        let mut r = rng(81);
        let mut tensors = BTreeMap::new();
        tensors.insert("b.w".to_string(), Tensor::uniform(&mut r, vec![3, 2], -1.0, 1.0));
        tensors.insert("a.v".to_string(), Tensor::uniform(&mut r, vec![4], -1.0, 1.0));
        Checkpoint::new(
            serde_json::json!({"seed": 7}),
            CheckpointMeta {
                kind: "stage1".into(),
                ..Default::default()
            },
            tensors,
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck, loaded);
        assert_eq!(bytes, loaded.to_bytes());
    }

    #[test]
    fn corrupted_payload_is_caught() {
        let ck = sample();
        let mut bytes = ck.to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::CorruptTensor(_))
        ));
    }

    #[test]
    fn unknown_version_rejected() {
        let ck = sample();
        let mut header: serde_json::Value = {
            let bytes = ck.to_bytes();
            let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
            serde_json::from_slice(&bytes[12..12 + len]).unwrap()
        };
        header["format_version"] = serde_json::json!(99);
        let header_bytes = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        assert!(matches!(
            Checkpoint::from_bytes(&out),
            Err(CheckpointError::UnknownVersion(99))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOPE00000000"),
            Err(CheckpointError::BadMagic)
        ));
    }
}
