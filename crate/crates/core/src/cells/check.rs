//! Whole-sequence gradient check for a cell plus a linear readout.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params, step, BoundParams, CellError, CellKind, CellSpec, CellState, StateVars};
use crate::autodiff::{finite_diff_check, GradReport, Tensor, DEFAULT_STEP};

/// Sizes used by [`check_cell_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckSetup {
    pub steps: usize,
    pub batch: usize,
    pub input_size: usize,
    pub hidden_size: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self { steps: 5, batch: 2, input_size: 3, hidden_size: 4, classes: 3, seed: 7 }
    }
}

/// The small spec the check runs for `kind` (`m = 9, k = 1` for NRU).
pub fn small_spec(kind: CellKind, setup: &GradCheckSetup) -> CellSpec {
    let mut spec = CellSpec::with_defaults(kind, setup.input_size, setup.hidden_size, 10);
    if kind == CellKind::Nru {
        spec.memory_size = 9;
        spec.num_heads = 1;
    }
    spec
}

/// Compares analytic gradients of a `steps`-long unroll against central
/// differences, over every parameter, the readout and every input.
///
/// Parameters start from the regular initialiser and receive a uniform
/// jitter so that zero-initialised biases are exercised too.
pub fn check_cell_gradients(spec: &CellSpec, setup: &GradCheckSetup, tol: f64) -> Result<GradReport, CellError> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut params = init_params(spec, &mut rng)?.into_map();
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let uniform = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid shape")
    };
    params.insert("out.W".into(), uniform(&[spec.hidden_size, setup.classes], &mut rng));
    params.insert("out.b".into(), uniform(&[setup.classes], &mut rng));
    for t in 0..setup.steps {
        params.insert(format!("x.{t}"), uniform(&[setup.batch, spec.input_size], &mut rng));
    }
    let targets: Vec<usize> = (0..setup.batch).map(|_| rng.gen_range(0..setup.classes)).collect();

    let zero = CellState::zeros(spec, setup.batch);
    let report = finite_diff_check(
        |tape, vars| {
            let bound = BoundParams::from(vars.clone());
            let mut state: StateVars = zero.bind(tape);
            for t in 0..setup.steps {
                state = step(spec, tape, &bound, &state, vars[&format!("x.{t}")]).map_err(into_autodiff)?;
            }
            let logits = tape.affine(state.h, vars["out.W"], vars["out.b"])?;
            tape.softmax_cross_entropy(logits, &targets)
        },
        &params,
        DEFAULT_STEP,
        tol,
    )?;
    Ok(report)
}

fn into_autodiff(e: CellError) -> crate::autodiff::AutodiffError {
    match e {
        CellError::Autodiff(a) => a,
        other => crate::autodiff::AutodiffError::InvalidArgument(other.to_string()),
    }
}

/// Runs [`check_cell_gradients`] for every kind at its small default spec.
pub fn check_all_kinds(setup: &GradCheckSetup, tol: f64) -> Result<BTreeMap<CellKind, GradReport>, CellError> {
    CellKind::ALL
        .into_iter()
        .map(|k| Ok((k, check_cell_gradients(&small_spec(k, setup), setup, tol)?)))
        .collect()
}
