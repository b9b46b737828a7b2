//! Command-line front end: `train`, `eval`, `sweep`, `gradcheck` and `probe`.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 divergence,
//! 3 failed gradient check.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use nrulab::cells::{check_cell_gradients, count_params, small_spec, CellKind, CellSpec, GradCheckSetup};
use nrulab::diagnostics::{self, DiagnosticsError};
use nrulab::tasks::TaskSpec;
use nrulab::training::{parse_override, write_metrics, Checkpoint, Split, TrainConfig, Trainer, TrainingError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

/// Dataset root used when a config has no `data_dir`.
pub const DATA_DIR_ENV: &str = "NRULAB_DATA_DIR";

pub const BUILD_ID: &str = concat!("nrulab ", env!("CARGO_PKG_VERSION"), " (", env!("NRULAB_GIT_REV"), ")");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed for {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Training(TrainingError::Divergence { .. }) => EXIT_DIVERGED,
            CliError::Diagnostics(DiagnosticsError::Training(TrainingError::Divergence { .. })) => EXIT_DIVERGED,
            CliError::GradCheck(_) => EXIT_GRADCHECK,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "nrulab", version, about = "Train and analyse recurrent cells on long-memory benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a JSON config, writing a manifest, metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted `key=value` edit applied to the config, e.g. `cell.hidden_size=32`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Parent directory of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Also write `checkpoints/step-N.ckpt` every this many steps.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
        /// Replace an existing run directory with the same run id.
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate a checkpoint on its own task or on `--task`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task as inline JSON, or `@FILE`.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Train every point of an NRU size grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Finite-difference check of a cell's analytic gradients.
    Gradcheck {
        /// Cell kind, or `all`.
        #[arg(long)]
        cell: String,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Per-step input-gradient norms or NRU memory contents on one eval batch.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: ProbeMode,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProbeMode {
    Gradnorm,
    Memtrace,
}

/// Written into the run directory before the first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub build: String,
    /// Config after overrides, seed and data-dir defaults; feeding it back
    /// to `train` repeats the run.
    pub config: TrainConfig,
    pub cell: CellSpec,
    pub params: usize,
    pub config_path: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| TrainingError::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Diagnostics go to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { config, seed, overrides, out, checkpoint_every, overwrite } => {
            let config = load_config(&config, &overrides, seed)?;
            let manifest = train(config, &out, checkpoint_every, overwrite)?;
            println!("{}", manifest.metrics_path.parent().unwrap_or(Path::new(".")).display());
            Ok(())
        }
        Command::Eval { checkpoint, task, batches } => eval(&checkpoint, task.as_deref(), batches),
        Command::Sweep { config, grid, parallel, overrides, out } => {
            let config = load_config(&config, &overrides, None)?;
            sweep(config, &grid, parallel, &out)
        }
        Command::Gradcheck { cell, steps, tol, batch, seed } => gradcheck(&cell, steps, tol, batch, seed),
        Command::Probe { checkpoint, mode, out } => probe(&checkpoint, mode, out.as_deref()),
    }
}

fn env_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()).map(PathBuf::from)
}

/// Reads a config file, applies overrides and `--seed`, and fills
/// `data_dir` from the environment when unset.
pub fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let pairs = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>, _>>()?;
    let mut config = TrainConfig::load(path, &pairs)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if config.data_dir.is_none() {
        config.data_dir = env_data_dir();
    }
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Runs `config` to completion under `out/<run_id>/`.
pub fn train(config: TrainConfig, out: &Path, checkpoint_every: u64, overwrite: bool) -> Result<RunManifest, CliError> {
    if config.run_id.is_empty() || config.run_id.contains(['/', '\\']) || config.run_id.starts_with('.') {
        return Err(CliError::Usage(format!("run_id `{}` cannot name a directory", config.run_id)));
    }
    let run_dir = out.join(&config.run_id);
    if run_dir.join(RunManifest::FILE).exists() && !overwrite {
        return Err(CliError::Usage(format!("{} already holds a run; pass --overwrite or change run_id", run_dir.display())));
    }
    let mut trainer = Trainer::new(config)?;

    let checkpoint_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir).map_err(io_err(&checkpoint_dir))?;
    let manifest = RunManifest {
        run_id: trainer.config().run_id.clone(),
        build: BUILD_ID.to_string(),
        config: trainer.config().clone(),
        cell: trainer.model().spec.clone(),
        params: count_params(&trainer.model().spec),
        config_path: run_dir.join("config.json"),
        metrics_path: run_dir.join("metrics.jsonl"),
        checkpoint_dir: checkpoint_dir.clone(),
    };
    write_file(&manifest.config_path, &(manifest.config.to_json() + "\n"))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    write_file(&run_dir.join(RunManifest::FILE), &text)?;
    eprintln!("{}: {} {} params, {} steps", manifest.run_id, manifest.cell.kind, manifest.params, trainer.total_steps());

    let metrics_path = &manifest.metrics_path;
    let file = fs::File::create(metrics_path).map_err(io_err(metrics_path))?;
    let mut sink = BufWriter::new(file);
    let total = trainer.total_steps();
    while trainer.step() < total {
        let records = match trainer.train_step() {
            Ok(r) => r,
            Err(TrainingError::Divergence { step, reason, last_good }) => {
                sink.flush().map_err(io_err(metrics_path))?;
                let path = checkpoint_dir.join("last_good.ckpt");
                last_good.save(&path)?;
                eprintln!("last good state saved to {}", path.display());
                return Err(TrainingError::Divergence { step, reason, last_good }.into());
            }
            Err(e) => return Err(e.into()),
        };
        for r in &records {
            writeln!(sink, "{}", r.to_json_line()).map_err(io_err(metrics_path))?;
            if r.split == Split::Eval {
                eprintln!("step {:>7} eval loss {:.5} acc {:.4}", r.step, r.loss_nats, r.accuracy);
            }
        }
        if checkpoint_every > 0 && trainer.step() % checkpoint_every == 0 {
            trainer.checkpoint().save(&checkpoint_dir.join(format!("step-{}.ckpt", trainer.step())))?;
        }
    }
    sink.flush().map_err(io_err(metrics_path))?;
    trainer.checkpoint().save(&checkpoint_dir.join("final.ckpt"))?;
    Ok(manifest)
}

fn parse_task(arg: &str) -> Result<TaskSpec, CliError> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| TrainingError::Io { path: path.into(), source: e })?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid --task: {e}")))
}

fn eval(path: &Path, task: Option<&str>, batches: Option<usize>) -> Result<(), CliError> {
    let mut ckpt = Checkpoint::load(path)?;
    if let Some(t) = task {
        ckpt.config.task = parse_task(t)?;
    }
    if let Some(n) = batches {
        ckpt.config.eval_batches = n;
    }
    if ckpt.config.data_dir.is_none() {
        ckpt.config.data_dir = env_data_dir();
    }
    let step = ckpt.step;
    let trainer = ckpt.resume()?;
    let m = trainer.evaluate()?;
    let line = serde_json::json!({
        "run_id": trainer.config().run_id,
        "step": step,
        "loss_nats": m.loss_nats,
        "bpc": m.bpc,
        "accuracy": m.accuracy,
    });
    println!("{line}");
    Ok(())
}

fn sweep(base: TrainConfig, grid_path: &Path, parallel: usize, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(grid_path).map_err(|e| TrainingError::Io { path: grid_path.into(), source: e })?;
    let grid = diagnostics::parse_grid(&text, base)?;
    let report = diagnostics::sweep(&grid, parallel)?;
    for (point, reason) in &report.skipped {
        eprintln!("skipped {point:?}: {reason}");
    }
    let dir = out.join(format!("{}-sweep", grid.base.run_id));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for row in &report.rows {
        let path = dir.join(format!("{}.jsonl", row.run_id));
        let mut buf = Vec::new();
        write_metrics(&mut buf, &row.records).map_err(io_err(&path))?;
        fs::write(&path, buf).map_err(io_err(&path))?;
    }
    let csv = report.to_csv();
    write_file(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn gradcheck(cell: &str, steps: usize, tol: f64, batch: usize, seed: u64) -> Result<(), CliError> {
    let kinds: Vec<CellKind> = if cell.eq_ignore_ascii_case("all") {
        CellKind::ALL.to_vec()
    } else {
        vec![cell.parse().map_err(TrainingError::from)?]
    };
    if steps == 0 || batch == 0 || tol.is_nan() || tol <= 0.0 {
        return Err(CliError::Usage("steps and batch must be positive and tol must be > 0".into()));
    }
    let setup = GradCheckSetup { steps, batch, seed, ..GradCheckSetup::default() };
    let mut failed = Vec::new();
    for kind in kinds {
        let report = check_cell_gradients(&small_spec(kind, &setup), &setup, tol).map_err(TrainingError::from)?;
        let verdict = if report.passed { "ok" } else { "FAILED" };
        println!("{kind:<12} max_rel_err {:.3e} (tol {tol:.0e}) {verdict}", report.max_rel_err);
        if !report.passed {
            if let Some((name, idx)) = &report.worst {
                println!("  worst coordinate: {name}[{idx}]");
            }
            failed.push(kind.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

fn probe(path: &Path, mode: ProbeMode, out: Option<&Path>) -> Result<(), CliError> {
    let mut ckpt = Checkpoint::load(path)?;
    if ckpt.config.data_dir.is_none() {
        ckpt.config.data_dir = env_data_dir();
    }
    ckpt.config.eval_batches = 1;
    let trainer = ckpt.resume()?;
    let (batches, _) = trainer.eval_batches()?;
    let batch = batches.first().ok_or_else(|| CliError::Usage("task produced no evaluation batch".into()))?;
    let csv = match mode {
        ProbeMode::Gradnorm => diagnostics::grad_norm_probe(trainer.model(), batch)?.to_csv(),
        ProbeMode::Memtrace => diagnostics::memory_trace(trainer.model(), batch)?.to_csv(),
    };
    match out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
