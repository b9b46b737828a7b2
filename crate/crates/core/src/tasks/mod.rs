//! Benchmark data: synthetic copy/denoise generators, permuted pixel MNIST
//! and character corpora, all emitted as time-major [`Batch`] values.

mod idx;
mod psmnist;
mod synthetic;
mod text;

#[cfg(test)]
mod tests;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

pub use idx::{encode_idx_images, encode_idx_labels, load_mnist_idx, parse_idx_images, parse_idx_labels, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use psmnist::{make_psmnist, Psmnist, PIXELS};
pub use synthetic::{baseline_ce, gen_copy, gen_copy_variable, gen_denoise};
pub use text::{iter_tbptt, load_text_corpus, TbpttWindows, TextCorpus};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("malformed data at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TaskError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TaskError::Io { path: path.into(), source }
    }
}

/// Dense symbol table. Ids are positions in `symbols`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
}

impl Vocab {
    pub fn new(symbols: Vec<String>) -> Self {
        Self { symbols }
    }

    /// `n` data symbols, then blank and marker, then pad when requested.
    pub fn synthetic(n: usize, with_pad: bool) -> Self {
        let mut symbols: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        symbols.push("<blank>".into());
        symbols.push("<marker>".into());
        if with_pad {
            symbols.push("<pad>".into());
        }
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Id of the blank symbol in a synthetic vocabulary with `n` data symbols.
pub fn blank_id(n: usize) -> usize {
    n
}

pub fn marker_id(n: usize) -> usize {
    n + 1
}

pub fn pad_id(n: usize) -> usize {
    n + 2
}

/// Time-major minibatch.
///
/// `inputs` has shape `[T, B, D]`; `targets` and `mask` hold `T·B` entries
/// indexed by `t·B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn new(inputs: Tensor, targets: Vec<usize>, mask: Vec<bool>) -> Result<Self, TaskError> {
        let shape = inputs.shape();
        if shape.len() != 3 {
            return Err(TaskError::Config(format!("batch inputs must be [T, B, D], got {shape:?}")));
        }
        let n = shape[0] * shape[1];
        if targets.len() != n || mask.len() != n {
            return Err(TaskError::Config(format!(
                "expected {n} targets and mask entries, got {} and {}",
                targets.len(),
                mask.len()
            )));
        }
        Ok(Self { inputs, targets, mask })
    }

    /// One-hot batch from time-major symbol ids (`ids[t·B + b]`).
    pub fn one_hot(
        steps: usize,
        batch: usize,
        classes: usize,
        ids: &[usize],
        targets: Vec<usize>,
        mask: Vec<bool>,
    ) -> Result<Self, TaskError> {
        if ids.len() != steps * batch {
            return Err(TaskError::Config(format!("expected {} input ids, got {}", steps * batch, ids.len())));
        }
        let mut data = vec![0.0; steps * batch * classes];
        for (row, &id) in ids.iter().enumerate() {
            if id >= classes {
                return Err(TaskError::Config(format!("symbol {id} outside vocabulary of {classes}")));
            }
            data[row * classes + id] = 1.0;
        }
        Self::new(Tensor::from_parts(vec![steps, batch, classes], data), targets, mask)
    }

    pub fn steps(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn input_size(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// Inputs at step `t` as a `[B×D]` matrix.
    pub fn step_input(&self, t: usize) -> Tensor {
        let width = self.batch_size() * self.input_size();
        let data = self.inputs.data()[t * width..(t + 1) * width].to_vec();
        Tensor::from_parts(vec![self.batch_size(), self.input_size()], data)
    }

    pub fn step_targets(&self, t: usize) -> &[usize] {
        let b = self.batch_size();
        &self.targets[t * b..(t + 1) * b]
    }

    pub fn step_mask(&self, t: usize) -> &[bool] {
        let b = self.batch_size();
        &self.mask[t * b..(t + 1) * b]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Targets of sequence `b` in time order.
    pub fn sequence_targets(&self, b: usize) -> Vec<usize> {
        (0..self.steps()).map(|t| self.targets[t * self.batch_size() + b]).collect()
    }

    /// Argmax input symbol of sequence `b` in time order (one-hot batches).
    pub fn sequence_inputs(&self, b: usize) -> Vec<usize> {
        let (bs, d) = (self.batch_size(), self.input_size());
        (0..self.steps())
            .map(|t| {
                let row = &self.inputs.data()[(t * bs + b) * d..(t * bs + b + 1) * d];
                row.iter().position(|&v| v == 1.0).unwrap_or(0)
            })
            .collect()
    }

    /// Sub-batch holding only sequence `b`.
    pub fn select(&self, b: usize) -> Batch {
        let (t, bs, d) = (self.steps(), self.batch_size(), self.input_size());
        let mut data = Vec::with_capacity(t * d);
        for s in 0..t {
            data.extend_from_slice(&self.inputs.data()[(s * bs + b) * d..(s * bs + b + 1) * d]);
        }
        Batch {
            inputs: Tensor::from_parts(vec![t, 1, d], data),
            targets: self.sequence_targets(b),
            mask: (0..t).map(|s| self.mask[s * bs + b]).collect(),
        }
    }

    /// Checks target range, mask/target consistency and one-hot validity.
    pub fn validate(&self, classes: usize, one_hot: bool) -> Result<(), TaskError> {
        if let Some(&t) = self.targets.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(t, _)| t).find(|&&t| t >= classes) {
            return Err(TaskError::Config(format!("target {t} outside {classes} classes")));
        }
        if one_hot {
            for (i, row) in self.inputs.data().chunks(self.input_size().max(1)).enumerate() {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(TaskError::Config(format!("input row {i} is not one-hot")));
                }
            }
        }
        Ok(())
    }
}

fn default_symbols() -> usize {
    8
}

fn default_recall() -> usize {
    10
}

fn default_window() -> usize {
    150
}

/// Serializable description of the data a run trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Copy {
        t: usize,
        #[serde(default = "default_symbols")]
        n: usize,
        #[serde(default = "default_recall")]
        recall_k: usize,
    },
    VariableCopy {
        t_max: usize,
        #[serde(default = "default_symbols")]
        n: usize,
        #[serde(default = "default_recall")]
        recall_k: usize,
    },
    Denoise {
        t: usize,
        #[serde(default = "default_symbols")]
        n: usize,
        #[serde(default = "default_recall")]
        recall_k: usize,
    },
    /// Paths are relative to the data root unless absolute.
    Psmnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        perm_seed: u64,
    },
    CharLm {
        train: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        valid: Option<PathBuf>,
        #[serde(default = "default_window")]
        window: usize,
    },
}

impl TaskSpec {
    /// Feature width of each input step, when it does not depend on data files.
    pub fn static_input_size(&self) -> Option<usize> {
        match *self {
            TaskSpec::Copy { n, .. } | TaskSpec::Denoise { n, .. } => Some(n + 2),
            TaskSpec::VariableCopy { n, .. } => Some(n + 3),
            TaskSpec::Psmnist { .. } => Some(1),
            TaskSpec::CharLm { .. } => None,
        }
    }

    /// Output classes, when they do not depend on data files.
    pub fn static_classes(&self) -> Option<usize> {
        match self {
            TaskSpec::Psmnist { .. } => Some(10),
            other => other.static_input_size(),
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, TaskSpec::Copy { .. } | TaskSpec::VariableCopy { .. } | TaskSpec::Denoise { .. })
    }

    /// Longest dependency the task exhibits, used for chrono initialisation.
    pub fn horizon(&self) -> usize {
        match *self {
            TaskSpec::Copy { t, recall_k, .. } | TaskSpec::Denoise { t, recall_k, .. } => t + 2 * recall_k,
            TaskSpec::VariableCopy { t_max, recall_k, .. } => t_max + 2 * recall_k,
            TaskSpec::Psmnist { .. } => PIXELS,
            TaskSpec::CharLm { window, .. } => window,
        }
    }

    /// Draws one synthetic batch; errors for file-backed tasks.
    pub fn generate<R: rand::Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch, TaskError> {
        match *self {
            TaskSpec::Copy { t, n, recall_k } => gen_copy(t, n, recall_k, batch, rng),
            TaskSpec::VariableCopy { t_max, n, recall_k } => gen_copy_variable(t_max, n, recall_k, batch, rng),
            TaskSpec::Denoise { t, n, recall_k } => gen_denoise(t, n, recall_k, batch, rng),
            _ => Err(TaskError::Config("task is backed by data files, not a generator".into())),
        }
    }
}
