//! Run configuration: a TOML file, dotted `key=value` overrides, and flag
//! shorthands, merged in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use saf_core::answerer::RemoteConfig;
use saf_core::rewards::RewardMode;
use saf_core::synthdata::SynthTaskConfig;
use saf_core::trainer::{AblationConfig, Strategy, TrainConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub task: SynthTaskConfig,
    pub n_train: usize,
    pub n_eval: usize,
    /// JSONL manifest replacing the synthetic training split.
    pub manifest: Option<PathBuf>,
    /// Manifest for evaluation; defaults to `manifest` when that is set.
    pub eval_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: SynthTaskConfig::default(),
            n_train: 500,
            n_eval: 100,
            manifest: None,
            eval_manifest: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub budget: usize,
    pub strategy: Strategy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            budget: 4,
            strategy: Strategy::Learned,
        }
    }
}

/// One curriculum stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub steps: u64,
    pub reward_mode: RewardMode,
    /// Training data for this phase; the run's training split otherwise.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seeds: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { seeds: 20 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Copied into `train.seed` and `data.task.seed`.
    pub seed: u64,
    pub out: PathBuf,
    /// `oracle` or `remote:<base URL>`.
    pub answerer: String,
    /// Checkpoint to resume from (train) or to load (eval, infer, ablate-selection).
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Curriculum playlist; empty means one phase of `train.max_steps`.
    pub phases: Vec<Phase>,
    pub ablation: AblationConfig,
    pub remote: RemoteConfig,
    pub grad_check: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/saf"),
            answerer: "oracle".into(),
            checkpoint: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            phases: Vec::new(),
            ablation: AblationConfig::default(),
            remote: RemoteConfig::default(),
            grad_check: GradCheckConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) inside `root`, creating tables on the way.
pub fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), String> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("malformed key `{path}`"));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = root;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("`{k}` in `{path}` is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<RunConfig, String> {
    let mut root = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut root, k, v.clone())?;
    }
    let mut cfg: RunConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| e.message().to_string())?;
    cfg.train.seed = cfg.seed;
    cfg.data.task.seed = cfg.seed;
    Ok(cfg)
}
