//! Recurrent cells behind one step-function contract.
//!
//! Every cell maps `(params, state, x_t)` to a new state on a [`Tape`]. Row
//! vectors multiply weight matrices from the left (`x · W`), so an input
//! weight for `d` features and `h` hidden units has shape `[d×h]`.

mod budget;
mod check;
mod gated;
mod init;
mod nru;
mod rnn;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

pub use check::{check_all_kinds, check_cell_gradients, small_spec, GradCheckSetup};
pub use budget::{count_params, match_budget, match_budget_like, BUDGET_TOLERANCE};
pub use gated::{gru_step, janet_step, lstm_step};
pub use init::{init_chrono, init_identity, init_orthogonal, xavier_uniform};
pub use nru::{nru_head_directions, nru_step, NORM_POWER};
pub use rnn::rnn_step;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CellError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid cell configuration: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("missing state component `{0}`")]
    MissingState(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "NRU")]
    Nru,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "LSTM_CHRONO")]
    LstmChrono,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "JANET")]
    Janet,
    #[serde(rename = "RNN_ORTH")]
    RnnOrth,
    #[serde(rename = "RNN_ID")]
    RnnId,
}

impl CellKind {
    pub const ALL: [CellKind; 7] = [
        CellKind::Nru,
        CellKind::Lstm,
        CellKind::LstmChrono,
        CellKind::Gru,
        CellKind::Janet,
        CellKind::RnnOrth,
        CellKind::RnnId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Nru => "NRU",
            CellKind::Lstm => "LSTM",
            CellKind::LstmChrono => "LSTM_CHRONO",
            CellKind::Gru => "GRU",
            CellKind::Janet => "JANET",
            CellKind::RnnOrth => "RNN_ORTH",
            CellKind::RnnId => "RNN_ID",
        }
    }

    pub fn is_vanilla(self) -> bool {
        matches!(self, CellKind::RnnOrth | CellKind::RnnId)
    }

    pub fn uses_chrono(self) -> bool {
        matches!(self, CellKind::LstmChrono | CellKind::Janet)
    }

    pub fn has_cell_vector(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::LstmChrono)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| CellError::Config(format!("unknown cell kind `{s}`")))
    }
}

/// Architecture choice and sizes for one recurrent cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    /// Memory vector width (NRU only).
    #[serde(default)]
    pub memory_size: usize,
    /// Number of write heads, equal to the number of erase heads (NRU only).
    #[serde(default)]
    pub num_heads: usize,
    #[serde(default)]
    pub heads_use_relu: bool,
    /// Pre-activation layer normalisation (vanilla RNNs only).
    #[serde(default)]
    pub layer_norm: bool,
    /// Longest expected dependency, for chrono initialisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
}

impl CellSpec {
    /// NRU with linear heads.
    pub fn nru(input_size: usize, hidden_size: usize, memory_size: usize, num_heads: usize) -> Result<Self, CellError> {
        let spec = Self {
            kind: CellKind::Nru,
            input_size,
            hidden_size,
            memory_size,
            num_heads,
            heads_use_relu: false,
            layer_norm: false,
            t_max: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default configuration of any cell kind. Vanilla RNNs get layer
    /// normalisation; chrono kinds get `t_max`; NRU gets four heads and a
    /// memory the size of the hidden state rounded to a valid width.
    pub fn with_defaults(kind: CellKind, input_size: usize, hidden_size: usize, t_max: usize) -> Self {
        let num_heads = if kind == CellKind::Nru { 4 } else { 0 };
        let memory_size = if kind == CellKind::Nru { budget::nearest_valid_memory(hidden_size, num_heads) } else { 0 };
        Self {
            kind,
            input_size,
            hidden_size,
            memory_size,
            num_heads,
            heads_use_relu: false,
            layer_norm: kind.is_vanilla(),
            t_max: kind.uses_chrono().then_some(t_max),
        }
    }

    /// Width `√(k·m)` of each factorised direction vector.
    pub fn direction_width(&self) -> usize {
        exact_sqrt(self.memory_size * self.num_heads).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), CellError> {
        if self.input_size == 0 || self.hidden_size == 0 {
            return Err(CellError::Config("input_size and hidden_size must be at least 1".into()));
        }
        if self.kind == CellKind::Nru {
            if self.memory_size == 0 || self.num_heads == 0 {
                return Err(CellError::Config("NRU needs memory_size >= 1 and num_heads >= 1".into()));
            }
            if exact_sqrt(self.memory_size * self.num_heads).is_none() {
                return Err(CellError::Config(format!(
                    "num_heads * memory_size = {} * {} is not a perfect square",
                    self.num_heads, self.memory_size
                )));
            }
        }
        if self.kind.uses_chrono() {
            match self.t_max {
                Some(t) if t >= 3 => {}
                Some(t) => return Err(CellError::Config(format!("t_max must be at least 3, got {t}"))),
                None => return Err(CellError::Config(format!("{} needs t_max", self.kind))),
            }
        }
        if self.layer_norm && self.kind.is_vanilla() && self.hidden_size < 2 {
            return Err(CellError::Config("layer_norm needs hidden_size >= 2".into()));
        }
        Ok(())
    }
}

pub(crate) fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.0
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.0
    }

    pub fn extend(&mut self, other: Params) {
        self.0.extend(other.0);
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(self.0.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect())
    }
}

impl From<BTreeMap<String, Tensor>> for Params {
    fn from(map: BTreeMap<String, Tensor>) -> Self {
        Self(map)
    }
}

/// Parameters registered on a tape.
#[derive(Debug, Clone, Default)]
pub struct BoundParams(BTreeMap<String, Var>);

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var, CellError> {
        self.0.get(name).copied().ok_or_else(|| CellError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }
}

impl From<BTreeMap<String, Var>> for BoundParams {
    fn from(map: BTreeMap<String, Var>) -> Self {
        Self(map)
    }
}

/// Per-sequence recurrent state values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub h: Tensor,
    /// NRU memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Tensor>,
    /// LSTM cell vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Tensor>,
}

impl CellState {
    pub fn zeros(spec: &CellSpec, batch: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, spec.hidden_size]),
            m: (spec.kind == CellKind::Nru).then(|| Tensor::zeros(&[batch, spec.memory_size])),
            c: spec.kind.has_cell_vector().then(|| Tensor::zeros(&[batch, spec.hidden_size])),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> StateVars {
        StateVars {
            h: tape.leaf(self.h.clone()),
            m: self.m.as_ref().map(|m| tape.leaf(m.clone())),
            c: self.c.as_ref().map(|c| tape.leaf(c.clone())),
        }
    }
}

/// Recurrent state as tape nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateVars {
    pub h: Var,
    pub m: Option<Var>,
    pub c: Option<Var>,
}

impl StateVars {
    /// Copies the current values off the tape.
    pub fn values(&self, tape: &Tape) -> CellState {
        CellState {
            h: tape.value(self.h).clone(),
            m: self.m.map(|m| tape.value(m).clone()),
            c: self.c.map(|c| tape.value(c).clone()),
        }
    }
}

/// Advances any cell kind by one time step.
pub fn step(spec: &CellSpec, tape: &mut Tape, params: &BoundParams, state: &StateVars, x: Var) -> Result<StateVars, CellError> {
    let batch = tape.value(x).rows();
    if tape.value(x).shape() != [batch, spec.input_size] {
        return Err(AutodiffError::Dimension {
            op: "cell input",
            lhs: tape.value(x).shape().to_vec(),
            rhs: vec![batch, spec.input_size],
        }
        .into());
    }
    match spec.kind {
        CellKind::Nru => nru_step(spec, tape, params, state, x),
        CellKind::Lstm | CellKind::LstmChrono => lstm_step(spec, tape, params, state, x),
        CellKind::Gru => gru_step(spec, tape, params, state, x),
        CellKind::Janet => janet_step(spec, tape, params, state, x),
        CellKind::RnnOrth | CellKind::RnnId => rnn_step(spec, tape, params, state, x, spec.layer_norm),
    }
}

/// Initialises every parameter of `spec`, consuming `rng` in a fixed order.
pub fn init_params<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Result<Params, CellError> {
    spec.validate()?;
    match spec.kind {
        CellKind::Nru => Ok(nru::init(spec, rng)),
        CellKind::Lstm | CellKind::LstmChrono => gated::init_lstm(spec, rng),
        CellKind::Gru => Ok(gated::init_gru(spec, rng)),
        CellKind::Janet => gated::init_janet(spec, rng),
        CellKind::RnnOrth | CellKind::RnnId => Ok(rnn::init(spec, rng)),
    }
}

#[cfg(test)]
mod tests;
