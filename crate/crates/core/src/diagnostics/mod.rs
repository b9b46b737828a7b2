//! Analysis tools: input-gradient profiles, memory traces, grid sweeps and
//! steps-to-threshold comparisons, with plain CSV export.

mod sweep;


use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::cells::CellKind;
use crate::tasks::Batch;
use crate::training::{unroll, MetricsRecord, Model, Split, TrainingError, UnrollOptions};

pub use sweep::{parse_grid, sweep, SweepGrid, SweepPoint, SweepReport, SweepRow};

/// Trailing window used to smooth loss curves.
pub const SMOOTHING_WINDOW: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("{0}")]
    Capability(String),
    #[error("invalid sweep grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

/// Per-step input sensitivity of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientProfile {
    /// `‖∂L/∂x_t‖₂` over the whole batch, one entry per time step.
    pub per_step: Vec<f64>,
}

impl GradientProfile {
    /// `‖∂L/∂x‖₂` over every step at once.
    pub fn total(&self) -> f64 {
        self.per_step.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,grad_norm\n");
        for (t, v) in self.per_step.iter().enumerate() {
            writeln!(out, "{t},{v:e}").expect("write to string");
        }
        out
    }
}

/// One forward and backward pass with the inputs as leaves. The model is
/// only read.
pub fn grad_norm_probe(model: &Model, batch: &Batch) -> Result<GradientProfile, DiagnosticsError> {
    let u = unroll(model, batch, None, UnrollOptions { track_inputs: true, track_memory: false })?;
    let g = u.tape.backward(u.loss).map_err(TrainingError::from)?;
    let per_step = u.inputs.iter().map(|&x| g.get(x).map_or(0.0, Tensor::l2_norm)).collect();
    Ok(GradientProfile { per_step })
}

/// Pre-clip global gradient norm of each training record, in step order.
pub fn grad_norm_series(records: &[MetricsRecord]) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter(|r| r.split == Split::Train)
        .filter_map(|r| r.grad_norm_preclip.map(|g| (r.step, g)))
        .collect()
}

/// Memory contents after every step of a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTrace {
    /// `[T × m]`; row `t` is the memory after consuming input `t`.
    pub values: Tensor,
}

impl MemoryTrace {
    /// `‖m_t − m_{t−1}‖₂` for every step, with `m_{−1} = 0`.
    pub fn step_changes(&self) -> Vec<f64> {
        let mut prev = vec![0.0; self.values.cols()];
        (0..self.values.rows())
            .map(|t| {
                let row = self.values.row(t);
                let d = row.iter().zip(&prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                prev.copy_from_slice(row);
                d
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 0..self.values.cols() {
            write!(out, ",m{j}").expect("write to string");
        }
        out.push('\n');
        for t in 0..self.values.rows() {
            write!(out, "{t}").expect("write to string");
            for v in self.values.row(t) {
                write!(out, ",{v:e}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

/// Replays the forward pass over sequence 0 of `batch`, keeping every memory state.
pub fn memory_trace(model: &Model, batch: &Batch) -> Result<MemoryTrace, DiagnosticsError> {
    if model.spec.kind != CellKind::Nru {
        return Err(DiagnosticsError::Capability(format!("{} has no memory vector to trace", model.spec.kind)));
    }
    let single = if batch.batch_size() == 1 { batch.clone() } else { batch.select(0) };
    let u = unroll(model, &single, None, UnrollOptions { track_inputs: false, track_memory: true })?;
    let m = model.spec.memory_size;
    let mut data = Vec::with_capacity(u.memory.len() * m);
    for &v in &u.memory {
        data.extend_from_slice(u.tape.value(v).data());
    }
    let values = Tensor::new(vec![u.memory.len(), m], data).map_err(TrainingError::from)?;
    Ok(MemoryTrace { values })
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Steps-to-threshold result for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub run_id: String,
    /// First step whose smoothed loss is below the threshold.
    pub reached_at: Option<u64>,
}

/// First step at which each stream's smoothed training loss drops below `threshold`.
pub fn convergence_report(streams: &[(String, Vec<(u64, f64)>)], threshold: f64) -> Vec<ConvergenceRow> {
    streams
        .iter()
        .map(|(run_id, points)| {
            let losses: Vec<f64> = points.iter().map(|p| p.1).collect();
            let reached_at = smoothed(&losses, SMOOTHING_WINDOW)
                .iter()
                .position(|&s| s < threshold)
                .map(|i| points[i].0);
            ConvergenceRow { run_id: run_id.clone(), reached_at }
        })
        .collect()
}

/// Training-loss points of one record stream, ready for [`convergence_report`].
pub fn train_losses(records: &[MetricsRecord]) -> Vec<(u64, f64)> {
    records.iter().filter(|r| r.split == Split::Train).map(|r| (r.step, r.loss_nats)).collect()
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("run_id,steps_to_threshold\n");
    for r in rows {
        match r.reached_at {
            Some(s) => writeln!(out, "{},{s}", r.run_id),
            None => writeln!(out, "{},not reached", r.run_id),
        }
        .expect("write to string");
    }
    out
}
