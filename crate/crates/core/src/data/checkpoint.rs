//! Checkpoint files: a JSON header, one blank line, then the raw parameter payload
//! as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::TrainHistory;

pub const CHECKPOINT_FORMAT: &str = "perturbench-ckpt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Byte length in the payload.
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub manifest: Vec<ManifestEntry>,
    pub payload_bytes: usize,
    pub checksum: String,
    #[serde(default)]
    pub training: Option<TrainHistory>,
}

pub fn encode_checkpoint(model: &Model, history: Option<&TrainHistory>) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut payload = Vec::with_capacity(model.parameter_count() * 8);
    for (name, t) in model.parameter_names().iter().zip(model.parameters()) {
        let offset = payload.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push(ManifestEntry { name: name.clone(), shape: t.shape().to_vec(), offset, bytes: payload.len() - offset });
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        config: model.config().clone(),
        manifest,
        payload_bytes: payload.len(),
        checksum: model.checksum(),
        training: history.cloned(),
    };
    let mut out = serde_json::to_vec_pretty(&header)?;
    out.extend_from_slice(b"\n\n");
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointHeader)> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Corruption("no blank line terminating the header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Corruption(format!("unreadable header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}", header.format)));
    }
    let payload = &bytes[split + 2..];
    if payload.len() != header.payload_bytes {
        return Err(Error::Corruption(format!(
            "payload holds {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let mut cursor = 0;
    let mut named = Vec::with_capacity(header.manifest.len());
    for e in &header.manifest {
        let count: usize = e.shape.iter().product();
        if e.offset != cursor || e.bytes != count * 8 || e.offset + e.bytes > payload.len() {
            return Err(Error::Corruption(format!("manifest entry {} does not tile the payload", e.name)));
        }
        let data = payload[e.offset..e.offset + e.bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        named.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        cursor += e.bytes;
    }
    if cursor != payload.len() {
        return Err(Error::Corruption(format!("manifest covers {cursor} of {} payload bytes", payload.len())));
    }
    let model = Model::from_parameters(header.config.clone(), named)
        .map_err(|e| Error::Corruption(format!("parameters inconsistent with config: {e}")))?;
    if model.checksum() != header.checksum {
        return Err(Error::Corruption("parameter checksum mismatch".into()));
    }
    Ok((model, header))
}

pub fn checkpoint_save(model: &Model, history: Option<&TrainHistory>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, history)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
