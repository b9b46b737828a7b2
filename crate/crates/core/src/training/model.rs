use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::cells::{init_params, step, xavier_uniform, BoundParams, CellSpec, CellState, Params, StateVars};
use crate::tasks::Batch;

use super::TrainingError;

pub const OUT_WEIGHT: &str = "out.W";
pub const OUT_BIAS: &str = "out.b";

/// A recurrent cell with an affine readout from the hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: CellSpec,
    pub classes: usize,
    /// Cell parameters plus `out.W` / `out.b`.
    pub params: Params,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(spec: CellSpec, classes: usize, rng: &mut R) -> Result<Self, TrainingError> {
        let mut params = init_params(&spec, rng)?;
        params.insert(OUT_WEIGHT, xavier_uniform(spec.hidden_size, classes, rng));
        params.insert(OUT_BIAS, Tensor::zeros(&[classes]));
        Ok(Self { spec, classes, params })
    }

    pub fn zero_state(&self, batch: usize) -> CellState {
        CellState::zeros(&self.spec, batch)
    }
}

/// What to record while unrolling.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnrollOptions {
    /// Register each step's input as a leaf kept for gradient queries.
    pub track_inputs: bool,
    /// Keep the memory node of every step.
    pub track_memory: bool,
}

/// A recorded forward pass over one batch.
#[derive(Debug)]
pub struct Unrolled {
    pub tape: Tape,
    pub params: BoundParams,
    pub loss: Var,
    pub logits: Var,
    pub inputs: Vec<Var>,
    pub memory: Vec<Var>,
    pub final_state: StateVars,
}

impl Unrolled {
    /// Gradients of the loss for every model parameter.
    pub fn param_grads(&self) -> Result<BTreeMap<String, Tensor>, TrainingError> {
        let g = self.tape.backward(self.loss)?;
        Ok(self.params.iter().map(|(n, &v)| (n.clone(), g.get_or_zeros(&self.tape, v))).collect())
    }
}

/// Unrolls `model` over `batch` from `init` (zeros when `None`), applies the
/// readout at every step and averages cross-entropy over the masked steps.
pub fn unroll(model: &Model, batch: &Batch, init: Option<&CellState>, opts: UnrollOptions) -> Result<Unrolled, TrainingError> {
    if batch.input_size() != model.spec.input_size {
        return Err(TrainingError::Config(format!(
            "batch has {} input features, model expects {}",
            batch.input_size(),
            model.spec.input_size
        )));
    }
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape);
    let zero;
    let init = match init {
        Some(s) => s,
        None => {
            zero = model.zero_state(batch.batch_size());
            &zero
        }
    };
    let mut state = init.bind(&mut tape);
    let mut hs = Vec::with_capacity(batch.steps());
    let mut inputs = Vec::new();
    let mut memory = Vec::new();
    for t in 0..batch.steps() {
        let x = tape.leaf(batch.step_input(t));
        if opts.track_inputs {
            inputs.push(x);
        }
        state = step(&model.spec, &mut tape, &params, &state, x)?;
        if opts.track_memory {
            if let Some(m) = state.m {
                memory.push(m);
            }
        }
        hs.push(state.h);
    }
    let stacked = tape.stack_rows(&hs)?;
    let logits = tape.affine(stacked, params.var(OUT_WEIGHT)?, params.var(OUT_BIAS)?)?;
    let loss = tape.masked_softmax_cross_entropy(logits, &batch.targets, &batch.mask)?;
    Ok(Unrolled { tape, params, loss, logits, inputs, memory, final_state: state })
}

/// Loss and accuracy of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    /// Mean masked cross-entropy in nats.
    pub loss: f64,
    /// Logits for every step, rows ordered `t·B + b`.
    pub logits: Tensor,
    pub correct: usize,
    pub counted: usize,
    pub final_state: CellState,
}

impl SequenceOutput {
    pub fn accuracy(&self) -> f64 {
        if self.counted == 0 {
            0.0
        } else {
            self.correct as f64 / self.counted as f64
        }
    }
}

/// Masked argmax hits. Ties resolve to the lowest class.
pub fn count_correct(logits: &Tensor, batch: &Batch) -> (usize, usize) {
    let mut correct = 0;
    let mut counted = 0;
    for (r, (&t, &m)) in batch.targets.iter().zip(&batch.mask).enumerate() {
        if !m {
            continue;
        }
        counted += 1;
        let row = logits.row(r);
        let arg = row.iter().enumerate().fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
        if arg == t {
            correct += 1;
        }
    }
    (correct, counted)
}

/// Forward pass only: masked mean cross-entropy and per-step logits.
pub fn run_sequence(model: &Model, batch: &Batch) -> Result<SequenceOutput, TrainingError> {
    run_sequence_from(model, batch, None)
}

pub fn run_sequence_from(model: &Model, batch: &Batch, init: Option<&CellState>) -> Result<SequenceOutput, TrainingError> {
    let u = unroll(model, batch, init, UnrollOptions::default())?;
    let logits = u.tape.value(u.logits).clone();
    let (correct, counted) = count_correct(&logits, batch);
    Ok(SequenceOutput {
        loss: u.tape.value(u.loss).item(),
        logits,
        correct,
        counted,
        final_state: u.final_state.values(&u.tape),
    })
}
