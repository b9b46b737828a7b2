//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `NRUCKPT1`, a little-endian `u64` header
//! length, a JSON header, then every tensor as raw little-endian `f64`.
//! The header lists each tensor's name, shape and byte offset into the
//! data section.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::cells::{CellSpec, CellState, Params};

use super::{AdamState, Model, TrainConfig, TrainingError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NRUCKPT1";

/// Largest header accepted when reading, to bound allocations on bad input.
const MAX_HEADER: u64 = 64 << 20;

/// Serialisable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string because it is 128 bits wide.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainingError> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| TrainingError::Checkpoint { offset: 0, reason: format!("bad rng word position `{}`", self.word_pos) })?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Where a run is inside its data stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataCursor {
    /// Next truncated-BPTT window.
    pub window: usize,
    /// Batches since the NRU memory was last reset.
    pub since_reset: usize,
}

/// Full training state: resuming from it continues a run bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub step: u64,
    pub rng: RngState,
    pub carry: Option<CellState>,
    pub cursor: DataCursor,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    spec: CellSpec,
    classes: usize,
    step: u64,
    rng: RngState,
    cursor: DataCursor,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> TrainingError {
    TrainingError::Checkpoint { offset, reason: reason.into() }
}

impl Checkpoint {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.model.params.iter() {
            out.push((format!("param/{n}"), t));
        }
        for (n, t) in &self.adam.m {
            out.push((format!("adam.m/{n}"), t));
        }
        for (n, t) in &self.adam.v {
            out.push((format!("adam.v/{n}"), t));
        }
        if let Some(c) = &self.carry {
            out.push(("carry/h".into(), &c.h));
            if let Some(m) = &c.m {
                out.push(("carry/m".into(), m));
            }
            if let Some(cv) = &c.c {
                out.push(("carry/c".into(), cv));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for (name, t) in &tensors {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += 8 * t.len() as u64;
        }
        let header = Header {
            config: self.config.clone(),
            spec: self.model.spec.clone(),
            classes: self.model.classes,
            step: self.step,
            rng: self.rng.clone(),
            cursor: self.cursor,
            adam_t: self.adam.t,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainingError> {
        if bytes.len() < 16 {
            return Err(corrupt(bytes.len(), "truncated preamble"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt(0, "bad magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
        if header_len > MAX_HEADER || header_len > (bytes.len() - 16) as u64 {
            return Err(corrupt(8, format!("header length {header_len} exceeds file")));
        }
        let data_start = 16 + header_len as usize;
        let header: Header =
            serde_json::from_slice(&bytes[16..data_start]).map_err(|e| corrupt(16, format!("bad header: {e}")))?;
        let data = &bytes[data_start..];

        let mut params = Params::new();
        let mut adam = AdamState { t: header.adam_t, ..AdamState::default() };
        let mut carry: BTreeMap<&str, Tensor> = BTreeMap::new();
        let mut expected_end = 0u64;
        for e in &header.tensors {
            let len = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= data.len() / 8)
                .ok_or_else(|| corrupt(16, format!("tensor `{}` has an impossible shape {:?}", e.name, e.shape)))?;
            if e.offset != expected_end {
                return Err(corrupt(data_start, format!("tensor `{}` is not contiguous", e.name)));
            }
            let start = e.offset as usize;
            let end = start + 8 * len;
            let raw = data
                .get(start..end)
                .ok_or_else(|| corrupt(data_start + start, format!("tensor `{}` runs past end of file", e.name)))?;
            expected_end = end as u64;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            let t = Tensor::new(e.shape.clone(), values).map_err(|err| corrupt(data_start + start, err.to_string()))?;
            let (kind, name) = e.name.split_once('/').ok_or_else(|| corrupt(16, format!("unqualified tensor name `{}`", e.name)))?;
            match kind {
                "param" => params.insert(name, t),
                "adam.m" => {
                    adam.m.insert(name.to_string(), t);
                }
                "adam.v" => {
                    adam.v.insert(name.to_string(), t);
                }
                "carry" if matches!(name, "h" | "m" | "c") => {
                    carry.insert(name, t);
                }
                _ => return Err(corrupt(16, format!("unknown tensor `{}`", e.name))),
            }
        }
        if expected_end as usize != data.len() {
            return Err(corrupt(data_start + expected_end as usize, "trailing bytes after tensors"));
        }
        let carry = match carry.remove("h") {
            Some(h) => Some(CellState { h, m: carry.remove("m"), c: carry.remove("c") }),
            None if carry.is_empty() => None,
            None => return Err(corrupt(16, "carried state without hidden vector")),
        };
        Ok(Self {
            config: header.config,
            model: Model { spec: header.spec, classes: header.classes, params },
            adam,
            step: header.step,
            rng: header.rng,
            carry,
            cursor: header.cursor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainingError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        let bytes = std::fs::read(path).map_err(|e| TrainingError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
