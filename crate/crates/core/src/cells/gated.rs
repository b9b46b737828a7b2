//! LSTM, GRU and JANET.

use rand::Rng;

use super::init::{init_chrono, xavier_uniform};
use super::{BoundParams, CellError, CellKind, CellSpec, Params, StateVars};
use crate::autodiff::{Tape, Tensor, Var};

/// Forget-gate bias of a plain LSTM.
pub const LSTM_FORGET_BIAS: f64 = 1.0;

/// `[fan_in × blocks·h]` with each `h`-wide block drawn as its own Xavier matrix.
fn blocked_xavier<R: Rng + ?Sized>(fan_in: usize, h: usize, blocks: usize, rng: &mut R) -> Tensor {
    let parts: Vec<Tensor> = (0..blocks).map(|_| xavier_uniform(fan_in, h, rng)).collect();
    let mut data = Vec::with_capacity(fan_in * h * blocks);
    for r in 0..fan_in {
        for p in &parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::from_parts(vec![fan_in, h * blocks], data)
}

// Gate order along the 4h axis: input, forget, candidate, output.
pub(super) fn init_lstm<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Result<Params, CellError> {
    let (d, h) = (spec.input_size, spec.hidden_size);
    let mut p = Params::new();
    p.insert("W", blocked_xavier(d + h, h, 4, rng));
    let mut b = vec![0.0; 4 * h];
    if spec.kind == CellKind::LstmChrono {
        let (bf, bi) = init_chrono(spec.t_max.unwrap_or(0), h, rng)?;
        b[..h].copy_from_slice(bi.data());
        b[h..2 * h].copy_from_slice(bf.data());
    } else {
        b[h..2 * h].iter_mut().for_each(|v| *v = LSTM_FORGET_BIAS);
    }
    p.insert("b", Tensor::from_parts(vec![4 * h], b));
    Ok(p)
}

// Column order of W_x and b: update, reset, candidate.
pub(super) fn init_gru<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Params {
    let (d, h) = (spec.input_size, spec.hidden_size);
    let mut p = Params::new();
    p.insert("W_x", blocked_xavier(d, h, 3, rng));
    p.insert("U_gates", blocked_xavier(h, h, 2, rng));
    p.insert("U_cand", xavier_uniform(h, h, rng));
    p.insert("b", Tensor::zeros(&[3 * h]));
    p
}

// Column order: forget, candidate.
pub(super) fn init_janet<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Result<Params, CellError> {
    let (d, h) = (spec.input_size, spec.hidden_size);
    let mut p = Params::new();
    p.insert("W", blocked_xavier(d + h, h, 2, rng));
    let (bf, _) = init_chrono(spec.t_max.unwrap_or(0), h, rng)?;
    let mut b = vec![0.0; 2 * h];
    b[..h].copy_from_slice(bf.data());
    p.insert("b", Tensor::from_parts(vec![2 * h], b));
    Ok(p)
}

fn gate_slices(tape: &mut Tape, z: Var, h: usize, n: usize) -> Result<Vec<Var>, CellError> {
    (0..n).map(|i| Ok(tape.slice(z, i * h, (i + 1) * h)?)).collect()
}

/// `c_t = f ⊙ c + i ⊙ g`, `h_t = o ⊙ tanh(c_t)`.
pub fn lstm_step(spec: &CellSpec, tape: &mut Tape, params: &BoundParams, state: &StateVars, x: Var) -> Result<StateVars, CellError> {
    let c_prev = state.c.ok_or(CellError::MissingState("c"))?;
    let h = spec.hidden_size;
    let xh = tape.concat(&[x, state.h])?;
    let z = tape.affine(xh, params.var("W")?, params.var("b")?)?;
    let g = gate_slices(tape, z, h, 4)?;
    let i = tape.sigmoid(g[0]);
    let f = tape.sigmoid(g[1]);
    let cand = tape.tanh(g[2]);
    let o = tape.sigmoid(g[3]);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h_new = tape.mul(o, tc)?;
    Ok(StateVars { h: h_new, m: None, c: Some(c) })
}

/// `h_t = (1 − z) ⊙ h + z ⊙ tanh(x W + (r ⊙ h) U + b)`.
pub fn gru_step(spec: &CellSpec, tape: &mut Tape, params: &BoundParams, state: &StateVars, x: Var) -> Result<StateVars, CellError> {
    let h = spec.hidden_size;
    let gx = tape.affine(x, params.var("W_x")?, params.var("b")?)?;
    let gh = tape.matmul(state.h, params.var("U_gates")?)?;
    let gx = gate_slices(tape, gx, h, 3)?;
    let gh = gate_slices(tape, gh, h, 2)?;
    let zp = tape.add(gx[0], gh[0])?;
    let z = tape.sigmoid(zp);
    let rp = tape.add(gx[1], gh[1])?;
    let r = tape.sigmoid(rp);
    let rh = tape.mul(r, state.h)?;
    let ch = tape.matmul(rh, params.var("U_cand")?)?;
    let cp = tape.add(gx[2], ch)?;
    let cand = tape.tanh(cp);
    let delta = tape.sub(cand, state.h)?;
    let step = tape.mul(z, delta)?;
    let h_new = tape.add(state.h, step)?;
    Ok(StateVars { h: h_new, m: None, c: None })
}

/// `h_t = s ⊙ h + (1 − s) ⊙ tanh(·)` with a single forget gate `s`.
pub fn janet_step(spec: &CellSpec, tape: &mut Tape, params: &BoundParams, state: &StateVars, x: Var) -> Result<StateVars, CellError> {
    let h = spec.hidden_size;
    let xh = tape.concat(&[x, state.h])?;
    let z = tape.affine(xh, params.var("W")?, params.var("b")?)?;
    let g = gate_slices(tape, z, h, 2)?;
    let s = tape.sigmoid(g[0]);
    let cand = tape.tanh(g[1]);
    let delta = tape.sub(state.h, cand)?;
    let kept = tape.mul(s, delta)?;
    let h_new = tape.add(cand, kept)?;
    Ok(StateVars { h: h_new, m: None, c: None })
}
