use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cells::count_params;
use crate::training::{train_run, MetricsRecord, Split, TrainConfig};

use super::DiagnosticsError;

/// A base config plus value lists for NRU sizes. An empty list keeps the
/// base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub base: TrainConfig,
    #[serde(default)]
    pub num_heads: Vec<usize>,
    #[serde(default)]
    pub memory_size: Vec<usize>,
    #[serde(default)]
    pub hidden_size: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    num_heads: Vec<usize>,
    #[serde(default)]
    memory_size: Vec<usize>,
    #[serde(default)]
    hidden_size: Vec<usize>,
}

/// Parses a grid file (`{"num_heads": [...], "memory_size": [...], "hidden_size": [...]}`).
pub fn parse_grid(text: &str, base: TrainConfig) -> Result<SweepGrid, DiagnosticsError> {
    let g: GridFile = serde_json::from_str(text).map_err(|e| DiagnosticsError::Grid(e.to_string()))?;
    if [&g.num_heads, &g.memory_size, &g.hidden_size].iter().any(|l| l.contains(&0)) {
        return Err(DiagnosticsError::Grid("grid values must be positive".into()));
    }
    Ok(SweepGrid { base, num_heads: g.num_heads, memory_size: g.memory_size, hidden_size: g.hidden_size })
}

/// One grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub num_heads: Option<usize>,
    pub memory_size: Option<usize>,
    pub hidden_size: Option<usize>,
}

impl SweepPoint {
    fn label(&self) -> String {
        let f = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        format!("k{}-m{}-h{}", f(self.num_heads), f(self.memory_size), f(self.hidden_size))
    }
}

impl SweepGrid {
    /// Cartesian product in `(k, m, h)` order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let axis = |v: &[usize]| if v.is_empty() { vec![None] } else { v.iter().map(|&x| Some(x)).collect::<Vec<_>>() };
        let mut out = Vec::new();
        for &k in &axis(&self.num_heads) {
            for &m in &axis(&self.memory_size) {
                for &h in &axis(&self.hidden_size) {
                    out.push(SweepPoint { num_heads: k, memory_size: m, hidden_size: h });
                }
            }
        }
        out
    }

    /// Base config with the sizes of `p` applied.
    pub fn config_for(&self, p: &SweepPoint) -> TrainConfig {
        let mut c = self.base.clone();
        if let Some(k) = p.num_heads {
            c.cell.num_heads = Some(k);
        }
        if let Some(m) = p.memory_size {
            c.cell.memory_size = Some(m);
        }
        if let Some(h) = p.hidden_size {
            c.cell.hidden_size = Some(h);
        }
        if self.points().len() > 1 {
            c.run_id = format!("{}-{}", self.base.run_id, p.label());
        }
        c
    }
}

/// Outcome of one feasible grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub run_id: String,
    pub params: usize,
    pub final_train_loss: Option<f64>,
    pub best_eval_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// One row per feasible point, in grid order.
    pub rows: Vec<SweepRow>,
    /// Infeasible points with the reason they were skipped.
    pub skipped: Vec<(SweepPoint, String)>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run_id,num_heads,memory_size,hidden_size,params,final_train_loss,best_eval_loss,final_eval_loss\n");
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        let u = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.run_id,
                u(r.point.num_heads),
                u(r.point.memory_size),
                u(r.point.hidden_size),
                r.params,
                f(r.final_train_loss),
                f(r.best_eval_loss),
                f(r.final_eval_loss)
            )
            .expect("write to string");
        }
        out
    }
}

/// Feasibility of a point before any data is loaded.
fn check_point(config: &TrainConfig) -> Result<(), String> {
    let d = config.task.static_input_size().unwrap_or(1);
    config.cell.resolve(d, config.task.horizon(), config.param_budget).map_err(|e| e.to_string())?;
    Ok(())
}

/// Trains every feasible grid point on up to `parallelism` threads. Every
/// point uses the base seed, so results do not depend on scheduling.
pub fn sweep(grid: &SweepGrid, parallelism: usize) -> Result<SweepReport, DiagnosticsError> {
    let points = grid.points();
    let mut feasible = Vec::new();
    let mut skipped = Vec::new();
    for p in points {
        let config = grid.config_for(&p);
        match check_point(&config) {
            Ok(()) => feasible.push((p, config)),
            Err(reason) => skipped.push((p, reason)),
        }
    }

    let slots: Vec<Mutex<Option<Result<SweepRow, DiagnosticsError>>>> = feasible.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, feasible.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((point, config)) = feasible.get(i) else { break };
                let row = run_point(*point, config.clone());
                *slots[i].lock().expect("slot lock") = Some(row);
            });
        }
    });
    let rows = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport { rows, skipped })
}

fn run_point(point: SweepPoint, config: TrainConfig) -> Result<SweepRow, DiagnosticsError> {
    let run_id = config.run_id.clone();
    let out = train_run(config)?;
    let evals: Vec<f64> = out.records.iter().filter(|r| r.split == Split::Eval).map(|r| r.loss_nats).collect();
    Ok(SweepRow {
        point,
        run_id,
        params: count_params(&out.checkpoint.model.spec),
        final_train_loss: out.records.iter().rev().find(|r| r.split == Split::Train).map(|r| r.loss_nats),
        best_eval_loss: evals.iter().copied().reduce(f64::min),
        final_eval_loss: evals.last().copied(),
        records: out.records,
    })
}
