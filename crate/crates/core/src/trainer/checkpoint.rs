//! Versioned JSON checkpoints. Tensors are stored as base64 little-endian
//! f64 so values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::numerics::{AdamConfig, AdamState, ParamStore, Tensor};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    pub config: TrainConfig,
    pub params: ParamStore<f64>,
    /// Optimizer moments; needed for bit-exact resumption.
    pub adam: Option<AdamState<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    step: u64,
    config: AdamConfig,
    first_moment: Vec<TensorEntry>,
    second_moment: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u64,
    seed: u64,
    step: u64,
    config: TrainConfig,
    params: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam: Option<AdamEntry>,
}

fn encode(name: &str, t: &Tensor<f64>) -> TensorEntry {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    TensorEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: STANDARD.encode(bytes),
    }
}

fn decode(e: &TensorEntry) -> Result<Tensor<f64>, TrainError> {
    let corrupt = |message: String| TrainError::Corrupt {
        entry: e.name.clone(),
        message,
    };
    let bytes = STANDARD
        .decode(&e.data)
        .map_err(|err| corrupt(err.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(corrupt(format!(
            "{} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(e.shape.clone(), data).map_err(|err| corrupt(err.to_string()))
}

fn moments(m: &BTreeMap<String, Tensor<f64>>) -> Vec<TensorEntry> {
    m.iter().map(|(k, v)| encode(k, v)).collect()
}

fn unmoments(v: &[TensorEntry]) -> Result<BTreeMap<String, Tensor<f64>>, TrainError> {
    v.iter().map(|e| Ok((e.name.clone(), decode(e)?))).collect()
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            step: self.step,
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| encode(k, v)).collect(),
            adam: self.adam.as_ref().map(|a| AdamEntry {
                step: a.step,
                config: a.config,
                first_moment: moments(&a.first_moment),
                second_moment: moments(&a.second_moment),
            }),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let corrupt = |message: String| TrainError::Corrupt {
            entry: "<file>".into(),
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("missing format_version".into()))?;
        if found != FORMAT_VERSION {
            return Err(TrainError::Version {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        let mut params = ParamStore::new();
        for e in &file.params {
            params
                .insert(e.name.clone(), decode(e)?)
                .map_err(|err| TrainError::Corrupt {
                    entry: e.name.clone(),
                    message: err.to_string(),
                })?;
        }
        let adam = file
            .adam
            .map(|a| -> Result<AdamState<f64>, TrainError> {
                let mut s = AdamState::new(a.config);
                s.step = a.step;
                s.first_moment = unmoments(&a.first_moment)?;
                s.second_moment = unmoments(&a.second_moment)?;
                Ok(s)
            })
            .transpose()?;
        Ok(Self {
            seed: file.seed,
            step: file.step,
            config: file.config,
            params,
            adam,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    fs::write(path, ckpt.to_json()).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_json(&text)
}
