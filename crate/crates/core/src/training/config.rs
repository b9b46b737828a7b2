use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cells::{match_budget_like, CellKind, CellSpec};
use crate::tasks::TaskSpec;

use super::TrainingError;

/// Cell choice as written in a config file. Sizes left out are filled from
/// the task (input width, chrono horizon) or searched from `param_budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub kind: CellKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<usize>,
    #[serde(default)]
    pub heads_use_relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_norm: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
}

impl CellConfig {
    pub fn new(kind: CellKind) -> Self {
        Self { kind, hidden_size: None, memory_size: None, num_heads: None, heads_use_relu: false, layer_norm: None, t_max: None }
    }

    pub fn nru(hidden: usize, memory: usize, heads: usize) -> Self {
        Self { hidden_size: Some(hidden), memory_size: Some(memory), num_heads: Some(heads), ..Self::new(CellKind::Nru) }
    }

    pub fn sized(kind: CellKind, hidden: usize) -> Self {
        Self { hidden_size: Some(hidden), ..Self::new(kind) }
    }

    /// Concrete spec for an input width and dependency horizon.
    pub fn resolve(&self, input_size: usize, horizon: usize, budget: Option<usize>) -> Result<CellSpec, TrainingError> {
        let t_max = self.t_max.unwrap_or(horizon.max(3));
        let mut spec = CellSpec::with_defaults(self.kind, input_size, self.hidden_size.unwrap_or(1), t_max);
        if let Some(k) = self.num_heads {
            spec.num_heads = k;
        }
        if let Some(ln) = self.layer_norm {
            spec.layer_norm = ln;
        }
        spec.heads_use_relu = self.heads_use_relu;
        match (budget, self.hidden_size) {
            (Some(target), _) => {
                spec = match_budget_like(&spec, target)?;
            }
            (None, Some(_)) => {
                if self.kind == CellKind::Nru {
                    spec.memory_size = self.memory_size.unwrap_or(spec.memory_size);
                }
            }
            (None, None) => {
                return Err(TrainingError::Config("cell.hidden_size is required unless param_budget is set".into()));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn default_run_id() -> String {
    "run".into()
}
fn default_lr() -> f64 {
    0.001
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_batch() -> usize {
    10
}
fn default_eval_batches() -> usize {
    10
}
fn default_log_every() -> usize {
    1
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub cell: CellConfig,
    pub task: TaskSpec,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; `null` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub max_steps: usize,
    /// Passes over a file-backed training set; overrides `max_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Evaluate every this many steps (0 disables).
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
    /// Emit a training record every this many steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub random_label_mode: bool,
    /// Reset the NRU memory every this many batches instead of every batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_reset_period: Option<usize>,
    /// Resize the cell to this many parameters (output head excluded).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_budget: Option<usize>,
    /// Root for relative dataset paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Record elapsed milliseconds in metrics (breaks bitwise-identical logs).
    #[serde(default)]
    pub record_wall_time: bool,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "run_id",
    "cell",
    "task",
    "learning_rate",
    "clip_norm",
    "batch_size",
    "max_steps",
    "epochs",
    "eval_every",
    "eval_batches",
    "log_every",
    "seed",
    "random_label_mode",
    "memory_reset_period",
    "param_budget",
    "data_dir",
    "record_wall_time",
];

const CELL_KEYS: &[&str] = &["kind", "hidden_size", "memory_size", "num_heads", "heads_use_relu", "layer_norm", "t_max"];

const TASK_KEYS: &[&str] = &[
    "name",
    "t",
    "t_max",
    "n",
    "recall_k",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "perm_seed",
    "train",
    "valid",
    "window",
];

fn nearest<'a>(key: &str, valid: &[&'a str]) -> &'a str {
    valid
        .iter()
        .copied()
        .min_by_key(|v| strsim::levenshtein(key, v))
        .expect("non-empty key list")
}

fn check_keys(value: &Value, path: &str, valid: &[&str]) -> Result<(), TrainingError> {
    if let Value::Object(map) = value {
        if let Some(key) = map.keys().find(|k| !valid.contains(&k.as_str())) {
            return Err(TrainingError::Config(format!(
                "unknown key `{path}{key}`; did you mean `{path}{}`?",
                nearest(key, valid)
            )));
        }
    }
    Ok(())
}

/// Sets `path` (dot separated) inside `root` to `raw`, parsed as JSON when
/// possible and as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<(), TrainingError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut keys = path.split('.').peekable();
    let mut node = root;
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(TrainingError::Config(format!("empty segment in override path `{path}`")));
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| TrainingError::Config(format!("override `{path}` descends into a non-object")))?;
        if keys.peek().is_none() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(arg: &str) -> Result<(&str, &str), TrainingError> {
    arg.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| TrainingError::Config(format!("override `{arg}` is not of the form key=value")))
}

impl TrainConfig {
    /// A copy-task run with a directly sized cell.
    pub fn copy(cell: CellConfig, t: usize, max_steps: usize, seed: u64) -> Self {
        Self {
            run_id: default_run_id(),
            cell,
            task: TaskSpec::Copy { t, n: 8, recall_k: 10 },
            learning_rate: default_lr(),
            clip_norm: default_clip(),
            batch_size: default_batch(),
            max_steps,
            epochs: None,
            eval_every: 0,
            eval_batches: default_eval_batches(),
            log_every: 1,
            seed,
            random_label_mode: false,
            memory_reset_period: None,
            param_budget: None,
            data_dir: None,
            record_wall_time: false,
        }
    }

    /// Parses a JSON config and applies `key=value` overrides.
    pub fn from_json_with_overrides(text: &str, overrides: &[(&str, &str)]) -> Result<Self, TrainingError> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| TrainingError::Config(format!("config is not valid JSON: {e}")))?;
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        Self::from_value(value)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainingError> {
        Self::from_json_with_overrides(text, &[])
    }

    pub fn from_value(value: Value) -> Result<Self, TrainingError> {
        check_keys(&value, "", TOP_LEVEL_KEYS)?;
        if let Some(cell) = value.get("cell") {
            check_keys(cell, "cell.", CELL_KEYS)?;
        }
        if let Some(task) = value.get("task") {
            check_keys(task, "task.", TASK_KEYS)?;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| TrainingError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(&str, &str)]) -> Result<Self, TrainingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainingError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) {
            return Err(TrainingError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(c) = self.clip_norm {
            if !positive(c) {
                return Err(TrainingError::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch_size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(TrainingError::Config("log_every must be at least 1".into()));
        }
        if self.memory_reset_period == Some(0) {
            return Err(TrainingError::Config("memory_reset_period must be at least 1".into()));
        }
        if self.epochs.is_some() && self.task.is_synthetic() {
            return Err(TrainingError::Config("epochs apply to file-backed tasks; use max_steps".into()));
        }
        Ok(())
    }

    /// Resolves a dataset path against `data_dir`.
    pub fn data_path(&self, path: &Path) -> PathBuf {
        match &self.data_dir {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }
}
