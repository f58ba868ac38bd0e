//! Checkpoints: a JSON manifest plus one little-endian f32 payload holding
//! every parameter tensor, then the Adam first moments, then the second
//! moments, all in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::net::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::volio::{header_path, payload_path};

pub const CHECKPOINT_FORMAT: &str = "connseg-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub adam: AdamConfig,
    pub adam_t: u64,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training settings, kept for reference.
    #[serde(default)]
    pub training: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

fn push_all(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(stem: &Path, ck: &Checkpoint) -> Result<()> {
    let mut manifest = ck.manifest.clone();
    manifest.format = CHECKPOINT_FORMAT.into();
    manifest.config = ck.params.config.clone();
    manifest.adam_t = ck.adam.t;
    manifest.tensors = ck
        .params
        .tensors
        .iter()
        .map(|t| TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            trainable: t.trainable,
        })
        .collect();
    let mut raw = Vec::new();
    for t in &ck.params.tensors {
        push_all(&mut raw, &t.value);
    }
    for m in ck.adam.m.iter().chain(&ck.adam.v) {
        push_all(&mut raw, m);
    }
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let hp = header_path(stem);
    fs::write(&hp, json).map_err(|e| Error::io(&hp, e))?;
    let pp = payload_path(stem);
    fs::write(&pp, raw).map_err(|e| Error::io(&pp, e))
}

pub fn load_checkpoint(stem: &Path) -> Result<Checkpoint> {
    let hp = header_path(stem);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: hp.clone(),
        reason,
    };
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(malformed(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    manifest.config.validate()?;
    let mut params = ModelParams::<f32>::init(&manifest.config, 0)?;
    let layout_ok = params.tensors.len() == manifest.tensors.len()
        && params
            .tensors
            .iter()
            .zip(&manifest.tensors)
            .all(|(t, e)| t.name == e.name && t.shape == e.shape && t.trainable == e.trainable);
    if !layout_ok {
        return Err(malformed("tensor list does not match the model configuration".into()));
    }
    let pp = payload_path(stem);
    let raw = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    let n_values: usize = params.tensors.iter().map(|t| t.value.len()).sum();
    let n_moments: usize = params.tensors.iter().filter(|t| t.trainable).map(|t| t.value.len()).sum();
    let expected = 4 * (n_values + 2 * n_moments) as u64;
    if (raw.len() as u64) < expected {
        return Err(Error::Truncated {
            path: pp,
            expected,
            found: raw.len() as u64,
        });
    }
    if raw.len() as u64 > expected {
        return Err(malformed(format!("payload has {} bytes, manifest implies {expected}", raw.len())));
    }
    let mut vals = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for t in &mut params.tensors {
        for v in &mut t.value {
            *v = vals.next().expect("length checked");
        }
    }
    let mut adam = AdamState::new(&params);
    adam.t = manifest.adam_t;
    for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        for v in buf.iter_mut() {
            *v = vals.next().expect("length checked");
        }
    }
    Ok(Checkpoint { manifest, params, adam })
}
