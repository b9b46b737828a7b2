//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so every verdict is printed; exits non-zero if any fails.
//!
//! `NRULAB_ACCEPTANCE=1,2,9` restricts the run to the listed criteria.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nrulab::autodiff::Tensor;
use nrulab::cells::{check_all_kinds, count_params, CellKind, CellSpec, GradCheckSetup, Params};
use nrulab::diagnostics::{grad_norm_probe, memory_trace, SMOOTHING_WINDOW};
use nrulab::tasks::{baseline_ce, blank_id, encode_idx_images, encode_idx_labels, gen_copy, marker_id, TaskSpec};
use nrulab::training::{run_sequence, write_metrics, CellConfig, Checkpoint, Model, TrainConfig, Trainer, OUT_BIAS, OUT_WEIGHT};

// criterion 1
const GRAD_TOL: f64 = 1e-5;
const GRAD_RUNTIME: Duration = Duration::from_secs(60);
// criterion 2
const BASELINE_TOL: f64 = 0.005;
const CONSTANT_PREDICTOR_TOL: f64 = 1e-6;
// criteria 3, 6 and 8
const COPY_THRESHOLD: f64 = 0.02;
const DESK_T: usize = 30;
const DESK_STEPS: usize = 20_000;
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const RESET_PERIODS: [usize; 3] = [2, 5, 10];
// criteria 4 and 5
const COPY_BUDGET: usize = 23_500;
const LONG_T: usize = 100;
const ORDERING_STEPS: usize = 10_000;
const ORDERING_SEEDS: [u64; 3] = [1, 2, 3];
const ORDERING_WINS: usize = 2;
const FLOW_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
// criterion 6
const RANDOM_LABEL_STEPS: usize = 5_000;
// criterion 7
const SMOKE_STEPS: usize = 500;
const SMOKE_DROP: f64 = 0.10;
const PSMNIST_BUDGET: usize = 165_000;
const PTB_BUDGET: usize = 2_150_000;
const PTB_VOCAB: usize = 50;
const SMOKE_BUDGET_TOL: f64 = 0.05;
// criterion 8
const MEMORY_RATIO: f64 = 0.1;
const TRACE_SEQUENCES: usize = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Trailing mean of the last `SMOOTHING_WINDOW` values.
fn tail_mean(v: &[f64]) -> f64 {
    let tail = &v[v.len().saturating_sub(SMOOTHING_WINDOW)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

struct Run {
    trainer: Trainer,
    losses: Vec<f64>,
    /// First step whose smoothed loss is below the threshold.
    reached: Option<u64>,
}

/// Trains until the smoothed training loss drops below `threshold` (when
/// given) or the step budget runs out.
fn train(config: TrainConfig, threshold: Option<f64>) -> Run {
    let mut trainer = Trainer::new(config).expect("config is valid");
    let mut losses = Vec::new();
    while trainer.step() < trainer.total_steps() {
        for r in trainer.train_step().expect("training stays finite") {
            losses.push(r.loss_nats);
            if let Some(th) = threshold {
                if losses.len() >= SMOOTHING_WINDOW && tail_mean(&losses) < th {
                    return Run { reached: Some(r.step), trainer, losses };
                }
            }
        }
    }
    Run { trainer, losses, reached: None }
}

fn desk_config(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig::copy(CellConfig::nru(64, 64, 4), DESK_T, steps, seed)
}

fn budget_config(kind: CellKind, seed: u64, steps: usize) -> TrainConfig {
    let mut c = TrainConfig::copy(CellConfig::new(kind), LONG_T, steps, seed);
    c.param_budget = Some(COPY_BUDGET);
    c
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let reports = check_all_kinds(&GradCheckSetup::default(), GRAD_TOL).expect("grad check runs");
    let elapsed = start.elapsed();
    let (worst_kind, worst) = reports
        .iter()
        .map(|(k, r)| (*k, r.max_rel_err))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("seven kinds");
    let failed: Vec<String> = reports.iter().filter(|(_, r)| !r.passed).map(|(k, _)| k.to_string()).collect();
    let pass = failed.is_empty() && reports.len() == CellKind::ALL.len() && elapsed < GRAD_RUNTIME;
    verdict(
        pass,
        format!(
            "gradient check over {} kinds: worst {worst_kind} {worst:.2e} (tol {GRAD_TOL:.0e}), failed [{}], {:.1}s (limit {}s)",
            reports.len(),
            failed.join(","),
            elapsed.as_secs_f64(),
            GRAD_RUNTIME.as_secs()
        ),
    )
}

/// Predicts blank everywhere except the recall window, where it is uniform
/// over the data symbols: the memoryless optimum on the copy task.
fn constant_blank_model(n: usize) -> Model {
    let v = n + 2;
    let mut spec = CellSpec::with_defaults(CellKind::RnnId, v, 2, 10);
    spec.layer_norm = false;
    let mut model = Model::init(spec, v, &mut ChaCha8Rng::seed_from_u64(0)).expect("init");
    // unit 0 fires on the marker, unit 1 latches it for the rest of the sequence
    let mut u = Tensor::zeros(&[v, 2]);
    u.data_mut()[marker_id(n) * 2] = 50.0;
    let w = Tensor::from_rows(&[vec![0.0, 50.0], vec![0.0, 50.0]]).expect("rows");
    let mut out_w = Tensor::zeros(&[2, v]);
    out_w.data_mut()[v + blank_id(n)] = -100.0;
    out_w.data_mut()[v + marker_id(n)] = -50.0;
    let mut out_b = Tensor::zeros(&[v]);
    out_b.data_mut()[blank_id(n)] = 50.0;
    let mut p = Params::new();
    p.insert("U", u);
    p.insert("W", w);
    p.insert("b", Tensor::zeros(&[2]));
    p.insert(OUT_WEIGHT, out_w);
    p.insert(OUT_BIAS, out_b);
    model.params = p;
    model
}

fn criterion_2() -> Verdict {
    let b100 = baseline_ce(100, 8, 10);
    let b200 = baseline_ce(200, 8, 10);
    let model = constant_blank_model(8);
    let mut worst: f64 = 0.0;
    for t in [100, 200] {
        let batch = gen_copy(t, 8, 10, 10, &mut ChaCha8Rng::seed_from_u64(t as u64)).expect("copy batch");
        let loss = run_sequence(&model, &batch).expect("forward").loss;
        worst = worst.max((loss - baseline_ce(t, 8, 10)).abs());
    }
    let pass = (b100 - 0.17).abs() <= BASELINE_TOL && (b200 - 0.09).abs() <= BASELINE_TOL && worst < CONSTANT_PREDICTOR_TOL;
    verdict(pass, format!("baseline T=100 {b100:.4}, T=200 {b200:.4} (±{BASELINE_TOL}); constant predictor gap {worst:.1e} (tol {CONSTANT_PREDICTOR_TOL:.0e})"))
}

fn criterion_3(runs: &[Run], elapsed: Duration) -> Verdict {
    let reached: Vec<String> = runs.iter().map(|r| r.reached.map_or("not reached".into(), |s| s.to_string())).collect();
    let pass = runs.iter().all(|r| r.reached.is_some());
    verdict(
        pass,
        format!(
            "NRU h=64 m=64 k=4 copy T={DESK_T}: smoothed loss < {COPY_THRESHOLD} at steps [{}] of {DESK_STEPS}, {:.1} min",
            reached.join(", "),
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in ORDERING_SEEDS {
        let nru = tail_mean(&train(budget_config(CellKind::Nru, seed, ORDERING_STEPS), None).losses);
        let lstm = tail_mean(&train(budget_config(CellKind::Lstm, seed, ORDERING_STEPS), None).losses);
        if nru < lstm {
            wins += 1;
        }
        rows.push(format!("seed {seed}: {nru:.4} vs {lstm:.4}"));
    }
    verdict(
        wins >= ORDERING_WINS,
        format!("copy T={LONG_T}, {COPY_BUDGET} params, {ORDERING_STEPS} steps, NRU vs LSTM final smoothed loss: {}; NRU lower in {wins}/{}", rows.join("; "), ORDERING_SEEDS.len()),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_5() -> Verdict {
    let task = TaskSpec::Copy { t: LONG_T, n: 8, recall_k: 10 };
    let norms = |kind: CellKind| {
        let spec = CellConfig::new(kind).resolve(10, task.horizon(), Some(COPY_BUDGET)).expect("budget resolves");
        let v: Vec<f64> = FLOW_SEEDS
            .iter()
            .map(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let model = Model::init(spec.clone(), 10, &mut rng).expect("init");
                let batch = task.generate(10, &mut rng).expect("batch");
                grad_norm_probe(&model, &batch).expect("probe").total()
            })
            .collect();
        median(v)
    };
    let (nru, lstm) = (norms(CellKind::Nru), norms(CellKind::Lstm));
    verdict(nru > lstm, format!("median total input-gradient norm at init, copy T={LONG_T}, {} seeds: NRU {nru:.4e} vs LSTM {lstm:.4e}", FLOW_SEEDS.len()))
}

fn criterion_6() -> Verdict {
    let mut config = budget_config(CellKind::Nru, 1, RANDOM_LABEL_STEPS);
    config.random_label_mode = true;
    let mut trainer = Trainer::new(config).expect("config");
    let mut finite = true;
    let mut error = None;
    while trainer.step() < trainer.total_steps() {
        match trainer.train_step() {
            Ok(records) => {
                finite &= records.iter().all(|r| r.loss_nats.is_finite() && r.grad_norm_preclip.is_some_and(f64::is_finite));
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    finite &= trainer.model().params.iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite()));
    let stable = finite && error.is_none();

    let mut reset = Vec::new();
    for period in RESET_PERIODS {
        let mut c = desk_config(DESK_SEEDS[0], 2 * DESK_STEPS);
        c.memory_reset_period = Some(period);
        reset.push((period, train(c, Some(COPY_THRESHOLD)).reached));
    }
    let converged = reset.iter().all(|r| r.1.is_some());
    let resets: Vec<String> = reset.iter().map(|(p, s)| format!("p={p}: {}", s.map_or("not reached".into(), |s| s.to_string()))).collect();
    verdict(
        stable && converged,
        format!(
            "random labels T={LONG_T} {RANDOM_LABEL_STEPS} steps: {}; memory reset periods within {} steps: {}",
            error.unwrap_or_else(|| if finite { "finite".into() } else { "non-finite".into() }),
            2 * DESK_STEPS,
            resets.join(", ")
        ),
    )
}

/// Relative drop from the mean of the first ten losses to the trailing mean.
fn loss_drop(losses: &[f64]) -> f64 {
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    1.0 - tail_mean(losses) / head
}

fn smoke_psmnist(dir: &Path) -> f64 {
    // 784-pixel images whose class sets every tenth pixel, plus noise
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 200;
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let pixels: Vec<u8> = labels
        .iter()
        .flat_map(|&l| (0..784).map(move |p| (p, l)))
        .map(|(p, l)| if p % 10 == l as usize { 200 + rng.gen_range(0..56) } else { rng.gen_range(0..40) })
        .collect();
    fs::write(dir.join("images"), encode_idx_images(&pixels, 28, 28)).expect("write images");
    fs::write(dir.join("labels"), encode_idx_labels(&labels)).expect("write labels");
    let config = TrainConfig::from_json(&format!(
        r#"{{"cell": {{"kind": "NRU", "hidden_size": 16, "memory_size": 16, "num_heads": 1}},
            "task": {{"name": "psmnist", "train_images": "images", "train_labels": "labels", "perm_seed": 5}},
            "batch_size": 4, "max_steps": {SMOKE_STEPS}, "seed": 1, "data_dir": {:?}}}"#,
        dir
    ))
    .expect("psmnist config");
    loss_drop(&train(config, None).losses)
}

fn smoke_char_lm(dir: &Path) -> f64 {
    let words = ["the", "market", "shares", "rose", "fell", "bank", "said", "in", "of", "a", "new", "year"];
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let text: String = (0..12_000).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ");
    fs::write(dir.join("train.txt"), text).expect("write corpus");
    let config = TrainConfig::from_json(&format!(
        r#"{{"cell": {{"kind": "NRU", "hidden_size": 32, "memory_size": 16, "num_heads": 1, "heads_use_relu": true}},
            "task": {{"name": "char_lm", "train": "train.txt", "window": 150}},
            "batch_size": 4, "max_steps": {SMOKE_STEPS}, "seed": 1, "data_dir": {:?}}}"#,
        dir
    ))
    .expect("char-lm config");
    loss_drop(&train(config, None).losses)
}

fn criterion_7() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let ps = smoke_psmnist(dir.path());
    let lm = smoke_char_lm(dir.path());
    let mut worst = (CellKind::Nru, "", 0.0f64);
    for kind in CellKind::ALL {
        for (label, d, target) in [("psMNIST", 1, PSMNIST_BUDGET), ("char-LM", PTB_VOCAB, PTB_BUDGET)] {
            let spec = CellConfig::new(kind).resolve(d, 150, Some(target)).expect("budget resolves");
            let gap = (count_params(&spec) as f64 / target as f64 - 1.0).abs();
            if gap >= worst.2 {
                worst = (kind, label, gap);
            }
        }
    }
    let pass = ps >= SMOKE_DROP && lm >= SMOKE_DROP && worst.2 < SMOKE_BUDGET_TOL;
    verdict(
        pass,
        format!(
            "{SMOKE_STEPS}-step loss drop psMNIST {:.1}%, char-LM {:.1}% (need {:.0}%); worst budget gap {} {} {:.2}% (limit {:.0}%)",
            100.0 * ps,
            100.0 * lm,
            100.0 * SMOKE_DROP,
            worst.0,
            worst.1,
            100.0 * worst.2,
            100.0 * SMOKE_BUDGET_TOL
        ),
    )
}

fn criterion_8(model: &Model) -> Verdict {
    let k = 10;
    let batch = TaskSpec::Copy { t: DESK_T, n: 8, recall_k: k }
        .generate(TRACE_SEQUENCES, &mut ChaCha8Rng::seed_from_u64(99))
        .expect("batch");
    let (mut blank, mut edges) = (Vec::new(), Vec::new());
    for b in 0..TRACE_SEQUENCES {
        let changes = memory_trace(model, &batch.select(b)).expect("trace").step_changes();
        let len = changes.len();
        edges.extend_from_slice(&changes[..k]);
        edges.extend_from_slice(&changes[len - k..]);
        // blanks between the last data symbol and the marker
        blank.extend_from_slice(&changes[k..k + DESK_T - 1]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (b, e) = (mean(&blank), mean(&edges));
    let ratio = if e > 0.0 { b / e } else { f64::INFINITY };
    verdict(ratio < MEMORY_RATIO, format!("mean memory change blank span {b:.3e}, first/last k {e:.3e}, ratio {ratio:.4} (limit {MEMORY_RATIO})"))
}

fn criterion_9() -> Verdict {
    let mut config = TrainConfig::copy(CellConfig::nru(16, 16, 4), 20, 300, 7);
    config.eval_every = 100;
    config.eval_batches = 2;
    config.memory_reset_period = Some(3);
    let dir = tempfile::tempdir().expect("tempdir");
    let metrics_file = |name: &str| {
        let out = nrulab::training::train_run(config.clone()).expect("run");
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).expect("create");
        write_metrics(&mut f, &out.records).expect("write");
        (fs::read(path).expect("read"), out.checkpoint)
    };
    let (a, ckpt) = metrics_file("a.jsonl");
    let (b, _) = metrics_file("b.jsonl");
    let same_metrics = a == b && !a.is_empty();

    let path = dir.path().join("run.ckpt");
    ckpt.save(&path).expect("save");
    let loaded = Checkpoint::load(&path).expect("load");
    let exact = loaded.to_bytes() == ckpt.to_bytes()
        && loaded.model.params.iter().zip(ckpt.model.params.iter()).all(|((_, x), (_, y))| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });

    // a run resumed halfway matches the uninterrupted one
    let mut half = config.clone();
    half.max_steps = 150;
    let mut first = Trainer::new(half).expect("config");
    while first.step() < first.total_steps() {
        first.train_step().expect("step");
    }
    let mut resumed = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).expect("decode");
    resumed.config.max_steps = 300;
    let mut second = resumed.resume().expect("resume");
    while second.step() < second.total_steps() {
        second.train_step().expect("step");
    }
    let resume_exact = second.checkpoint().to_bytes() == ckpt.to_bytes();

    verdict(
        same_metrics && exact && resume_exact,
        format!(
            "identical metrics files: {same_metrics} ({} bytes); checkpoint round trip exact: {exact}; resumed run exact: {resume_exact}",
            a.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    }
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("NRULAB_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |c: u32| selected.as_ref().is_none_or(|s| s.contains(&c));

    let mut results: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |c: u32, v: Verdict| {
        println!("criterion {c}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((c, v));
    };

    if wanted(1) {
        report(1, guarded(criterion_1));
    }
    if wanted(2) {
        report(2, guarded(criterion_2));
    }
    let mut desk_model = None;
    if wanted(3) || wanted(8) {
        let start = Instant::now();
        let runs = panic::catch_unwind(|| DESK_SEEDS.iter().map(|&s| train(desk_config(s, DESK_STEPS), Some(COPY_THRESHOLD))).collect::<Vec<_>>());
        match runs {
            Ok(runs) => {
                if wanted(3) {
                    report(3, criterion_3(&runs, start.elapsed()));
                }
                desk_model = runs.into_iter().next().map(|r| r.trainer.model().clone());
            }
            Err(_) => report(3, verdict(false, "desk-scale training panicked")),
        }
    }
    if wanted(4) {
        report(4, guarded(criterion_4));
    }
    if wanted(5) {
        report(5, guarded(criterion_5));
    }
    if wanted(6) {
        report(6, guarded(criterion_6));
    }
    if wanted(7) {
        report(7, guarded(criterion_7));
    }
    if wanted(8) {
        match &desk_model {
            Some(m) => report(8, guarded(|| criterion_8(m))),
            None => report(8, verdict(false, "no trained desk-scale model")),
        }
    }
    if wanted(9) {
        report(9, guarded(criterion_9));
    }

    let failed: Vec<u32> = results.iter().filter(|(_, v)| !v.pass).map(|(c, _)| *c).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
