//! Checkpoint directory: `manifest.json` plus `weights.bin`, the tensors as
//! concatenated little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into `weights.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub training_seed: u64,
    pub tensors: Vec<TensorEntry>,
}

fn encode_weights(model: &Model) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut bytes = Vec::with_capacity(model.num_weights() * 8);
    let mut entries = Vec::with_capacity(model.params().len());
    for p in model.params() {
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: [p.value.rows(), p.value.cols()],
            offset: bytes.len(),
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (entries, bytes)
}

pub fn save_checkpoint(dir: &Path, model: &Model, training_seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (tensors, bytes) = encode_weights(model);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        training_seed,
        tensors,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Manifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "checkpoint format {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let len = t.shape[0] * t.shape[1];
        let end = t.offset + len * 8;
        let raw = bytes.get(t.offset..end).ok_or_else(|| {
            Error::Schema(format!("{} extends past the end of {WEIGHTS_FILE}", t.name))
        })?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((t.name.clone(), Matrix::from_vec(t.shape[0], t.shape[1], data)?));
    }
    let model = Model::from_tensors(manifest.config.clone(), tensors)?;
    Ok((model, manifest))
}

/// Short content hash of the model weights and configuration.
pub fn checkpoint_id(model: &Model) -> String {
    let (_, bytes) = encode_weights(model);
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&model.config).expect("config serialises"));
    hasher.update(&bytes);
    hex::encode(&hasher.finalize()[..8])
}
