use rand::Rng;

use super::init::{init_identity, init_orthogonal, xavier_uniform};
use super::{BoundParams, CellError, CellKind, CellSpec, Params, StateVars};
use crate::autodiff::{Tape, Tensor, Var};

pub(super) fn init<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Params {
    let (d, h) = (spec.input_size, spec.hidden_size);
    let mut p = Params::new();
    let w = match spec.kind {
        CellKind::RnnId => init_identity(h),
        _ => init_orthogonal(h, rng),
    };
    p.insert("W", w);
    p.insert("U", xavier_uniform(d, h, rng));
    p.insert("b", Tensor::zeros(&[h]));
    if spec.layer_norm {
        p.insert("ln.gain", Tensor::ones(&[h]));
        p.insert("ln.bias", Tensor::zeros(&[h]));
    }
    p
}

/// `h_t = tanh(LN?(h W + x U + b))`.
pub fn rnn_step(
    _spec: &CellSpec,
    tape: &mut Tape,
    params: &BoundParams,
    state: &StateVars,
    x: Var,
    use_layer_norm: bool,
) -> Result<StateVars, CellError> {
    let recur = tape.matmul(state.h, params.var("W")?)?;
    let inp = tape.affine(x, params.var("U")?, params.var("b")?)?;
    let mut z = tape.add(recur, inp)?;
    if use_layer_norm {
        z = tape.layer_norm(z, params.var("ln.gain")?, params.var("ln.bias")?)?;
    }
    let h = tape.tanh(z);
    Ok(StateVars { h, m: None, c: None })
}
