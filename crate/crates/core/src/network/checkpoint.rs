//! Checkpoints: a JSON manifest next to one little-endian `f64` blob.
//!
//! The blob holds the learnable tensors in registry order followed by the
//! EvNorm running statistics (mean then std per slot). Keeping every float in
//! the blob makes save -> load -> save byte-identical.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equivariant::EvNormStats;
use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig, ParamStore, TensorInfo};
use crate::training::{Mode, Target};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Provenance stored with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub engine_version: String,
    pub basis_checksum: String,
    pub step: u64,
    pub epoch: u64,
    /// What the model was trained to predict.
    pub target: Target,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: u32,
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
    /// Number of EvNorm slots stored after the tensors, each `2 * hidden_dim` values.
    evnorm_slots: usize,
    known_charges: Option<Vec<i32>>,
    meta: CheckpointMeta,
    blob: String,
    blob_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

/// Blob path belonging to a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        8 * (model.params.len() + 2 * model.stats.len() * model.config.hidden_dim),
    );
    let floats = model
        .params
        .data
        .iter()
        .chain(model.stats.iter().flat_map(|s| s.mean.iter().chain(&s.std)));
    for x in floats {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let blob = encode(model);
    let blob_file = blob_path(path);
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        config: model.config.clone(),
        tensors: model.params.tensors.clone(),
        evnorm_slots: model.stats.len(),
        known_charges: model
            .known_charges
            .as_ref()
            .map(|k| k.iter().copied().collect()),
        meta: meta.clone(),
        blob: blob_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!(
            "checkpoint format {} is not supported",
            manifest.format
        )));
    }
    let blob_file = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.blob_sha256 {
        return Err(Error::ChecksumMismatch(format!(
            "{} does not match the manifest digest",
            blob_file.display()
        )));
    }
    if bytes.len() % 8 != 0 {
        return Err(Error::Shape(
            "checkpoint blob is not a whole number of f64".into(),
        ));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let mut model = Model::zeroed(manifest.config)?;
    if model.params.tensors != manifest.tensors || model.stats.len() != manifest.evnorm_slots {
        return Err(Error::Shape(
            "checkpoint registry does not match the architecture its config describes".into(),
        ));
    }
    let np = model.params.len();
    let c = model.config.hidden_dim;
    if floats.len() != np + 2 * c * manifest.evnorm_slots {
        return Err(Error::Shape(format!(
            "checkpoint blob holds {} values, expected {}",
            floats.len(),
            np + 2 * c * manifest.evnorm_slots
        )));
    }
    model.params = ParamStore::from_parts(manifest.tensors, floats[..np].to_vec())?;
    model.stats = floats[np..]
        .chunks_exact(2 * c)
        .map(|s| EvNormStats {
            mean: s[..c].to_vec(),
            std: s[c..].to_vec(),
        })
        .collect();
    model.known_charges = manifest
        .known_charges
        .map(|k| k.into_iter().collect::<BTreeSet<_>>());
    Ok(Checkpoint {
        model,
        meta: manifest.meta,
    })
}
