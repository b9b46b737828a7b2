//! Non-saturating recurrent unit.
//!
//! ```text
//! h_t = relu(h_{t-1} W_h + x_t W_i + m_{t-1} W_c + b_h)
//! u   = [x_t, h_t, m_{t-1}]
//! α   = u A + a          β = u B + b          (k values each, optional relu)
//! v^w = chunks_k(norm5(relu?(p^w ⊗ q^w)))     p^w, q^w = affine(u) ∈ R^{√(km)}
//! v^e = chunks_k(norm5(relu?(p^e ⊗ q^e)))
//! m_t = m_{t-1} + Σ_i α_i v^w_i − Σ_i β_i v^e_i
//! ```
//!
//! The heads read the freshly computed `h_t`, not `h_{t-1}`.

use rand::Rng;

use super::init::xavier_uniform;
use super::{BoundParams, CellError, CellSpec, Params, StateVars};
use crate::autodiff::{Tape, Tensor, Var, LP_NORM_EPS};

/// Power of the norm applied to every head direction.
pub const NORM_POWER: u32 = 5;

const SCALAR_HEADS: [&str; 2] = ["alpha", "beta"];
const DIRECTION_HEADS: [&str; 4] = ["write_p", "write_q", "erase_p", "erase_q"];

pub(super) fn head_input_size(spec: &CellSpec) -> usize {
    spec.input_size + spec.hidden_size + spec.memory_size
}

pub(super) fn init<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Params {
    let (d, h, m, k) = (spec.input_size, spec.hidden_size, spec.memory_size, spec.num_heads);
    let s = spec.direction_width();
    let u = head_input_size(spec);
    let mut p = Params::new();
    p.insert("W_h", xavier_uniform(h, h, rng));
    p.insert("W_i", xavier_uniform(d, h, rng));
    p.insert("W_c", xavier_uniform(m, h, rng));
    p.insert("b_h", Tensor::zeros(&[h]));
    // Write and erase magnitudes start at zero: with random weights the
    // m -> alpha -> m loop grows geometrically and overflows within tens of steps.
    for name in SCALAR_HEADS {
        p.insert(format!("{name}.W"), Tensor::zeros(&[u, k]));
        p.insert(format!("{name}.b"), Tensor::zeros(&[k]));
    }
    for name in DIRECTION_HEADS {
        p.insert(format!("{name}.W"), xavier_uniform(u, s, rng));
        p.insert(format!("{name}.b"), Tensor::zeros(&[s]));
    }
    p
}

fn head(tape: &mut Tape, params: &BoundParams, name: &str, input: Var) -> Result<Var, CellError> {
    let w = params.var(&format!("{name}.W"))?;
    let b = params.var(&format!("{name}.b"))?;
    Ok(tape.affine(input, w, b)?)
}

fn directions(spec: &CellSpec, tape: &mut Tape, params: &BoundParams, prefix: &str, input: Var) -> Result<Var, CellError> {
    let p = head(tape, params, &format!("{prefix}_p"), input)?;
    let q = head(tape, params, &format!("{prefix}_q"), input)?;
    let mut v = tape.outer(p, q)?;
    if spec.heads_use_relu {
        v = tape.relu(v);
    }
    let batch = tape.value(v).rows();
    let (k, m) = (spec.num_heads, spec.memory_size);
    let per_head = tape.reshape(v, &[batch * k, m])?;
    let normed = tape.lp_normalize(per_head, NORM_POWER, LP_NORM_EPS)?;
    Ok(tape.reshape(normed, &[batch, k * m])?)
}

/// Write and erase directions, each `[B × k·m]` with head `i` occupying
/// columns `i·m .. (i+1)·m`. Every head direction has unit 5-norm unless its
/// pre-normalisation vector is (numerically) zero.
pub fn nru_head_directions(
    spec: &CellSpec,
    tape: &mut Tape,
    params: &BoundParams,
    x: Var,
    h_t: Var,
    m_prev: Var,
) -> Result<(Var, Var), CellError> {
    let input = tape.concat(&[x, h_t, m_prev])?;
    let write = directions(spec, tape, params, "write", input)?;
    let erase = directions(spec, tape, params, "erase", input)?;
    Ok((write, erase))
}

pub fn nru_step(spec: &CellSpec, tape: &mut Tape, params: &BoundParams, state: &StateVars, x: Var) -> Result<StateVars, CellError> {
    let m_prev = state.m.ok_or(CellError::MissingState("m"))?;
    let recur = tape.matmul(state.h, params.var("W_h")?)?;
    let inp = tape.affine(x, params.var("W_i")?, params.var("b_h")?)?;
    let mem = tape.matmul(m_prev, params.var("W_c")?)?;
    let pre = tape.add(recur, inp)?;
    let pre = tape.add(pre, mem)?;
    let h = tape.relu(pre);

    let input = tape.concat(&[x, h, m_prev])?;
    let mut alpha = head(tape, params, "alpha", input)?;
    let mut beta = head(tape, params, "beta", input)?;
    if spec.heads_use_relu {
        alpha = tape.relu(alpha);
        beta = tape.relu(beta);
    }
    let v_write = directions(spec, tape, params, "write", input)?;
    let v_erase = directions(spec, tape, params, "erase", input)?;

    let written = tape.weighted_chunk_sum(alpha, v_write)?;
    let erased = tape.weighted_chunk_sum(beta, v_erase)?;
    let m = tape.add(m_prev, written)?;
    let m = tape.sub(m, erased)?;
    Ok(StateVars { h, m: Some(m), c: None })
}
