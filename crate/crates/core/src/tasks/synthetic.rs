use rand::seq::index::sample;
use rand::Rng;

use super::{blank_id, marker_id, pad_id, Batch, TaskError};

fn check_sizes(n: usize, batch: usize) -> Result<(), TaskError> {
    if n == 0 {
        return Err(TaskError::Config("need at least one data symbol".into()));
    }
    if batch == 0 {
        return Err(TaskError::Config("batch size must be at least 1".into()));
    }
    Ok(())
}

/// Writes one copy sequence of lag `t` into `(inputs, targets)`, both of
/// length `t + 2k`.
fn copy_sequence<R: Rng + ?Sized>(t: usize, n: usize, k: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let len = t + 2 * k;
    let mut inputs = vec![blank_id(n); len];
    let mut targets = vec![blank_id(n); len];
    for i in 0..k {
        let s = rng.gen_range(0..n);
        inputs[i] = s;
        targets[t + k + i] = s;
    }
    inputs[k + t - 1] = marker_id(n);
    (inputs, targets)
}

/// Interleaves per-sequence rows into time-major order, padding to the
/// longest sequence.
fn time_major(seqs: &[(Vec<usize>, Vec<usize>, Vec<bool>)], pad: usize, classes: usize) -> Result<Batch, TaskError> {
    let steps = seqs.iter().map(|s| s.0.len()).max().unwrap_or(0);
    let b = seqs.len();
    let mut ids = vec![pad; steps * b];
    let mut targets = vec![pad; steps * b];
    let mut mask = vec![false; steps * b];
    for (j, (inp, tgt, msk)) in seqs.iter().enumerate() {
        for t in 0..inp.len() {
            ids[t * b + j] = inp[t];
            targets[t * b + j] = tgt[t];
            mask[t * b + j] = msk[t];
        }
    }
    Batch::one_hot(steps, b, classes, &ids, targets, mask)
}

/// Copy memory task with lag `t`: `k` data symbols, `t − 1` blanks, a
/// marker, then `k` blanks during which the data must be reproduced.
pub fn gen_copy<R: Rng + ?Sized>(t: usize, n: usize, recall_k: usize, batch: usize, rng: &mut R) -> Result<Batch, TaskError> {
    check_sizes(n, batch)?;
    if t <= recall_k {
        return Err(TaskError::Config(format!("copy lag T={t} must exceed recall_k={recall_k}")));
    }
    let seqs: Vec<_> = (0..batch)
        .map(|_| {
            let (i, o) = copy_sequence(t, n, recall_k, rng);
            let m = vec![true; i.len()];
            (i, o, m)
        })
        .collect();
    time_major(&seqs, blank_id(n), n + 2)
}

/// Copy task whose lag is drawn per sequence from `U[recall_k, t_max]`.
/// Shorter sequences are right-padded with a pad symbol excluded from the loss.
pub fn gen_copy_variable<R: Rng + ?Sized>(
    t_max: usize,
    n: usize,
    recall_k: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Batch, TaskError> {
    check_sizes(n, batch)?;
    if t_max < recall_k || t_max == 0 {
        return Err(TaskError::Config(format!("T_max={t_max} must be positive and at least recall_k={recall_k}")));
    }
    let seqs: Vec<_> = (0..batch)
        .map(|_| {
            let lag = rng.gen_range(recall_k.max(1)..=t_max);
            let (i, o) = copy_sequence(lag, n, recall_k, rng);
            let m = vec![true; i.len()];
            (i, o, m)
        })
        .collect();
    time_major(&seqs, pad_id(n), n + 3)
}

/// Denoising task: `k` data symbols at sorted random positions inside `t`
/// noise (blank) symbols, a marker, then `k` recall steps.
pub fn gen_denoise<R: Rng + ?Sized>(t: usize, n: usize, recall_k: usize, batch: usize, rng: &mut R) -> Result<Batch, TaskError> {
    check_sizes(n, batch)?;
    if t < recall_k || t == 0 {
        return Err(TaskError::Config(format!("denoise length T={t} must be positive and at least recall_k={recall_k}")));
    }
    let len = t + 1 + recall_k;
    let seqs: Vec<_> = (0..batch)
        .map(|_| {
            let mut positions = sample(rng, t, recall_k).into_vec();
            positions.sort_unstable();
            let mut inputs = vec![blank_id(n); len];
            let mut targets = vec![blank_id(n); len];
            for (i, &p) in positions.iter().enumerate() {
                let s = rng.gen_range(0..n);
                inputs[p] = s;
                targets[t + 1 + i] = s;
            }
            inputs[t] = marker_id(n);
            (inputs, targets, vec![true; len])
        })
        .collect();
    time_major(&seqs, blank_id(n), n + 2)
}

/// Per-step cross-entropy of a memoryless predictor on the copy task:
/// `k·ln(n) / (T + 2k)`.
pub fn baseline_ce(t: usize, n: usize, recall_k: usize) -> f64 {
    if recall_k == 0 {
        return 0.0;
    }
    recall_k as f64 * (n as f64).ln() / (t + 2 * recall_k) as f64
}
