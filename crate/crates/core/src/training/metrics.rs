use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// One line of a metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub step: u64,
    pub split: Split,
    pub loss_nats: f64,
    pub bpc: f64,
    pub accuracy: f64,
    pub grad_norm_preclip: Option<f64>,
    pub grad_norm_postclip: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

/// Aggregate of an evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss_nats: f64,
    pub bpc: f64,
    pub accuracy: f64,
}

impl EvalMetrics {
    pub fn from_nats(loss_nats: f64, accuracy: f64) -> Self {
        Self { loss_nats, bpc: loss_nats / std::f64::consts::LN_2, accuracy }
    }
}

pub fn write_metrics<W: Write>(out: &mut W, records: &[MetricsRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, TrainingError> {
    let file = std::fs::File::open(path).map_err(|e| TrainingError::io(path, e))?;
    std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| TrainingError::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| TrainingError::Config(format!("{}:{}: bad metrics record: {e}", path.display(), i + 1)))
        })
        .collect()
}
