//! Checkpoints: `manifest.json` plus `tensors.bin`, a concatenation of
//! little-endian f64 blobs (parameters, then first moments, then second
//! moments, each in canonical parameter order). Every blob carries a
//! SHA-256 in the manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use staged_core::model::{Model, ModelConfig, Parameters};
use staged_core::optim::{AdamConfig, AdamState, LrSchedule, TrainingState};
use staged_core::tensor::Tensor;
use staged_core::Scalar;

use crate::error::{HarnessError, IoContext, Result};

pub const FORMAT: &str = "staged-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// `param`, `m` or `v`.
    pub group: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub schedule: LrSchedule,
    pub optimizer: AdamConfig,
    /// Learning-rate clock.
    pub clock: u64,
    /// Bias-correction counters, one per tensor.
    pub moment_steps: Vec<u64>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

const GROUPS: [&str; 3] = ["param", "m", "v"];

pub fn save_checkpoint<T: Scalar>(state: &TrainingState<T>, dir: &Path, metadata: serde_json::Value) -> Result<CheckpointManifest> {
    state.check_layout()?;
    std::fs::create_dir_all(dir).at(dir)?;
    let names = state.model.params.names();
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (group, p) in GROUPS.iter().zip([&state.model.params, &state.adam.m, &state.adam.v]) {
        for (name, t) in names.iter().zip(p.tensors()) {
            let offset = payload.len() as u64;
            let start = payload.len();
            for x in t.data() {
                payload.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                group: group.to_string(),
                shape: t.shape().to_vec(),
                offset,
                sha256: hex::encode(Sha256::digest(&payload[start..])),
            });
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        config: state.model.config.clone(),
        schedule: state.schedule,
        optimizer: state.optimizer,
        clock: state.adam.step,
        moment_steps: state.adam.moment_steps.clone(),
        tensors,
        metadata,
    };
    let payload_path = dir.join(PAYLOAD_FILE);
    std::fs::write(&payload_path, &payload).at(&payload_path)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(TrainingState<T>, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != FORMAT {
        return Err(HarnessError::Manifest(format!("unknown format `{}`", manifest.format)));
    }
    let payload_path = dir.join(PAYLOAD_FILE);
    let payload = std::fs::read(&payload_path).at(&payload_path)?;
    let names = Parameters::<T>::zeros(&manifest.config).names();
    let per_group = names.len();
    if manifest.tensors.len() != 3 * per_group {
        return Err(HarnessError::Manifest(format!(
            "expected {} tensors for this config, found {}",
            3 * per_group,
            manifest.tensors.len()
        )));
    }
    let mut groups: Vec<Vec<Tensor<T>>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for (i, e) in manifest.tensors.iter().enumerate() {
        let (g, name) = (i / per_group, &names[i % per_group]);
        if e.group != GROUPS[g] || &e.name != name {
            return Err(HarnessError::Manifest(format!(
                "entry {i} is {}:{}, expected {}:{name}",
                e.group, e.name, GROUPS[g]
            )));
        }
        let len: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let bytes = payload
            .get(start..start + 8 * len)
            .ok_or_else(|| HarnessError::Manifest(format!("tensor `{name}` runs past the payload")))?;
        if hex::encode(Sha256::digest(bytes)) != e.sha256 {
            return Err(HarnessError::Checksum {
                name: format!("{}:{name}", e.group),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        groups[g].push(Tensor::new(e.shape.clone(), data)?);
    }
    let v = Parameters::from_tensors(&manifest.config, groups.pop().expect("v"))?;
    let m = Parameters::from_tensors(&manifest.config, groups.pop().expect("m"))?;
    let params = Parameters::from_tensors(&manifest.config, groups.pop().expect("params"))?;
    let model = Model::new(manifest.config.clone(), params)?;
    let mut state = TrainingState::new(model, manifest.schedule, manifest.optimizer)?;
    state.adam = AdamState {
        m,
        v,
        step: manifest.clock,
        moment_steps: manifest.moment_steps.clone(),
    };
    state.check_layout()?;
    Ok((state, manifest))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").at(path)
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}
