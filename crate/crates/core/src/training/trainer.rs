use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::{CellKind, CellState};
use crate::tasks::{iter_tbptt, load_mnist_idx, load_text_corpus, make_psmnist, Batch, Psmnist, TaskSpec, TextCorpus};

use super::checkpoint::{DataCursor, RngState};
use super::{
    adam_step, clip_by_norm, count_correct, global_norm, unroll, AdamState, Checkpoint, EvalMetrics, MetricsRecord, Model,
    Split, TrainConfig, TrainingError, UnrollOptions,
};

/// Offset mixed into the seed of the held-out synthetic stream so it never
/// overlaps the training stream.
const EVAL_SEED_OFFSET: u64 = 0x5eed_e7a1;

enum Data {
    Synthetic(TaskSpec),
    Psmnist { train: Psmnist, test: Option<Psmnist> },
    CharLm { corpus: TextCorpus, valid: Option<Vec<usize>>, window: usize },
}

impl Data {
    fn load(config: &TrainConfig) -> Result<Self, TrainingError> {
        Ok(match &config.task {
            t if t.is_synthetic() => Data::Synthetic(t.clone()),
            TaskSpec::Psmnist { train_images, train_labels, test_images, test_labels, perm_seed } => {
                let (images, labels) = load_mnist_idx(&config.data_path(train_images), &config.data_path(train_labels))?;
                let train = make_psmnist(&images, &labels, *perm_seed)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => {
                        let (images, labels) = load_mnist_idx(&config.data_path(i), &config.data_path(l))?;
                        Some(Psmnist::with_permutation(&images, &labels, train.permutation().to_vec())?)
                    }
                    (None, None) => None,
                    _ => return Err(TrainingError::Config("test_images and test_labels must be given together".into())),
                };
                Data::Psmnist { train, test }
            }
            TaskSpec::CharLm { train, valid, window } => {
                let corpus = load_text_corpus(&config.data_path(train))?;
                let valid = valid.as_ref().map(|v| corpus.load_split(&config.data_path(v))).transpose()?;
                Data::CharLm { corpus, valid, window: *window }
            }
            _ => unreachable!("synthetic tasks handled above"),
        })
    }

    fn input_size(&self) -> usize {
        match self {
            Data::Synthetic(t) => t.static_input_size().expect("synthetic width"),
            Data::Psmnist { .. } => 1,
            Data::CharLm { corpus, .. } => corpus.vocab.len(),
        }
    }

    fn classes(&self) -> usize {
        match self {
            Data::Psmnist { .. } => 10,
            other => other.input_size(),
        }
    }
}

/// A training run that advances one update at a time.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    carry: Option<CellState>,
    cursor: DataCursor,
    data: Data,
    started: Instant,
}

impl Trainer {
    /// Loads data, resolves the cell and initialises parameters from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        let data = Data::load(&config)?;
        let spec = config.cell.resolve(data.input_size(), config.task.horizon(), config.param_budget)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::init(spec, data.classes(), &mut rng)?;
        Ok(Self {
            config,
            model,
            adam: AdamState::new(),
            rng,
            step: 0,
            carry: None,
            cursor: DataCursor::default(),
            data,
            started: Instant::now(),
        })
    }

    /// Resumes exactly where `ckpt` was taken.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainingError> {
        let data = Data::load(&ckpt.config)?;
        if ckpt.model.spec.input_size != data.input_size() || ckpt.model.classes != data.classes() {
            return Err(TrainingError::Config("checkpoint does not match its task's data".into()));
        }
        let mut probe = ChaCha8Rng::seed_from_u64(0);
        let fresh = Model::init(ckpt.model.spec.clone(), ckpt.model.classes, &mut probe)?;
        let shapes = |m: &Model| m.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>();
        if shapes(&fresh) != shapes(&ckpt.model) {
            return Err(TrainingError::Checkpoint { offset: 0, reason: "parameters do not match the cell spec".into() });
        }
        Ok(Self {
            rng: ckpt.rng.restore()?,
            config: ckpt.config,
            model: ckpt.model,
            adam: ckpt.adam,
            step: ckpt.step,
            carry: ckpt.carry,
            cursor: ckpt.cursor,
            data,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of updates the config asks for.
    pub fn total_steps(&self) -> u64 {
        match (self.config.epochs, &self.data) {
            (Some(e), Data::Psmnist { train, .. }) => (e * train.len().div_ceil(self.config.batch_size)) as u64,
            (Some(e), Data::CharLm { corpus, window, .. }) => {
                let n = iter_tbptt(&corpus.ids, corpus.vocab.len(), self.config.batch_size, *window)
                    .map(|w| w.num_windows())
                    .unwrap_or(0);
                (e * n) as u64
            }
            _ => self.config.max_steps as u64,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.snapshot(RngState::capture(&self.rng), self.cursor, self.carry.clone())
    }

    fn snapshot(&self, rng: RngState, cursor: DataCursor, carry: Option<CellState>) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            adam: self.adam.clone(),
            step: self.step,
            rng,
            carry,
            cursor,
        }
    }

    fn next_batch(&mut self) -> Result<(Batch, bool), TrainingError> {
        let b = self.config.batch_size;
        match &self.data {
            Data::Synthetic(task) => Ok((task.generate(b, &mut self.rng)?, false)),
            Data::Psmnist { train, .. } => {
                let idx: Vec<usize> = (0..b).map(|_| self.rng.gen_range(0..train.len())).collect();
                Ok((train.batch(&idx)?, false))
            }
            Data::CharLm { corpus, window, .. } => {
                let windows = iter_tbptt(&corpus.ids, corpus.vocab.len(), b, *window)?;
                let mut w = self.cursor.window;
                let restart = w == 0 || w >= windows.num_windows();
                if w >= windows.num_windows() {
                    w = 0;
                }
                let batch = windows.window_batch(w)?;
                self.cursor.window = w + 1;
                Ok((batch, !restart))
            }
        }
    }

    /// Initial state for the next batch, applying memory carry-over.
    fn initial_state(&self, batch: &Batch, stream_continues: bool) -> Option<CellState> {
        let carry = self.carry.as_ref().filter(|c| c.h.rows() == batch.batch_size())?;
        if stream_continues {
            return Some(carry.clone());
        }
        match self.config.memory_reset_period {
            Some(p) if self.model.spec.kind == CellKind::Nru && !self.cursor.since_reset.is_multiple_of(p) => {
                let mut s = self.model.zero_state(batch.batch_size());
                s.m = carry.m.clone();
                Some(s)
            }
            _ => None,
        }
    }

    fn shuffle_labels(&mut self, batch: &mut Batch) {
        let (steps, b) = (batch.steps(), batch.batch_size());
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut self.rng);
        let (targets, mask) = (batch.targets.clone(), batch.mask.clone());
        for t in 0..steps {
            for (j, &src) in perm.iter().enumerate() {
                batch.targets[t * b + j] = targets[t * b + src];
                batch.mask[t * b + j] = mask[t * b + src];
            }
        }
    }

    /// One update. Returns the records due at this step (possibly none).
    pub fn train_step(&mut self) -> Result<Vec<MetricsRecord>, TrainingError> {
        let rng_before = RngState::capture(&self.rng);
        let (cursor_before, carry_before) = (self.cursor, self.carry.clone());
        let result = self.try_step();
        match result {
            Err(TrainingError::NonFinite(reason)) => {
                let last_good = Box::new(self.snapshot(rng_before, cursor_before, carry_before));
                Err(TrainingError::Divergence { step: self.step + 1, reason, last_good })
            }
            other => other,
        }
    }

    fn try_step(&mut self) -> Result<Vec<MetricsRecord>, TrainingError> {
        let (mut batch, continues) = self.next_batch()?;
        if self.config.random_label_mode {
            self.shuffle_labels(&mut batch);
        }
        let init = self.initial_state(&batch, continues);
        let u = unroll(&self.model, &batch, init.as_ref(), UnrollOptions::default())?;
        let loss = u.tape.value(u.loss).item();
        if !loss.is_finite() {
            return Err(TrainingError::NonFinite(format!("loss is {loss}")));
        }
        let mut grads = u.param_grads()?;
        let (pre, post) = match self.config.clip_norm {
            Some(c) => {
                let pre = clip_by_norm(&mut grads, c)?;
                (pre, global_norm(grads.values()))
            }
            None => {
                let n = global_norm(grads.values());
                if !n.is_finite() {
                    return Err(TrainingError::NonFinite("gradient norm is not finite".into()));
                }
                (n, n)
            }
        };
        let mut params = std::mem::take(&mut self.model.params).into_map();
        let update = adam_step(&mut params, &grads, &mut self.adam, self.config.learning_rate);
        self.model.params = params.into();
        update?;

        let keeps_state = matches!(self.data, Data::CharLm { .. }) || self.config.memory_reset_period.is_some();
        self.carry = keeps_state.then(|| u.final_state.values(&u.tape));
        if let Some(p) = self.config.memory_reset_period {
            self.cursor.since_reset = (self.cursor.since_reset + 1) % p;
        }
        self.step += 1;

        let mut records = Vec::new();
        if self.step.is_multiple_of(self.config.log_every as u64) {
            let logits = u.tape.value(u.logits);
            let (correct, counted) = count_correct(logits, &batch);
            let acc = if counted == 0 { 0.0 } else { correct as f64 / counted as f64 };
            let m = EvalMetrics::from_nats(loss, acc);
            records.push(self.record(Split::Train, m, Some((pre, post))));
        }
        if self.config.eval_every > 0 && self.step.is_multiple_of(self.config.eval_every as u64) {
            let m = self.evaluate()?;
            records.push(self.record(Split::Eval, m, None));
        }
        Ok(records)
    }

    fn record(&self, split: Split, m: EvalMetrics, norms: Option<(f64, f64)>) -> MetricsRecord {
        MetricsRecord {
            run_id: self.config.run_id.clone(),
            step: self.step,
            split,
            loss_nats: m.loss_nats,
            bpc: m.bpc,
            accuracy: m.accuracy,
            grad_norm_preclip: norms.map(|n| n.0),
            grad_norm_postclip: norms.map(|n| n.1),
            wall_ms: self.config.record_wall_time.then(|| self.started.elapsed().as_secs_f64() * 1e3),
        }
    }

    /// Held-out batches: a fixed synthetic stream, the test split (or the
    /// head of the training set), or the validation text.
    pub fn eval_batches(&self) -> Result<(Vec<Batch>, bool), TrainingError> {
        let (b, n) = (self.config.batch_size, self.config.eval_batches.max(1));
        match &self.data {
            Data::Synthetic(task) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(EVAL_SEED_OFFSET));
                Ok(((0..n).map(|_| task.generate(b, &mut rng)).collect::<Result<_, _>>()?, false))
            }
            Data::Psmnist { train, test } => {
                let set = test.as_ref().unwrap_or(train);
                let items: Vec<usize> = (0..set.len().min(n * b)).collect();
                Ok((items.chunks(b).map(|c| set.batch(c)).collect::<Result<_, _>>()?, false))
            }
            Data::CharLm { corpus, valid, window } => {
                let ids = valid.as_deref().unwrap_or(&corpus.ids);
                let windows = iter_tbptt(ids, corpus.vocab.len(), b, *window)?;
                Ok((windows.take(n).collect::<Result<_, _>>()?, true))
            }
        }
    }

    pub fn evaluate(&self) -> Result<EvalMetrics, TrainingError> {
        let (batches, carry) = self.eval_batches()?;
        evaluate(&self.model, &batches, carry)
    }

    /// Runs to `total_steps`, handing each record to `sink`; the sink may
    /// stop the run early.
    pub fn run(&mut self, mut sink: impl FnMut(&MetricsRecord) -> ControlFlow<()>) -> Result<(), TrainingError> {
        while self.step < self.total_steps() {
            for r in self.train_step()? {
                if sink(&r).is_break() {
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Mean masked cross-entropy, bits per symbol and accuracy over `batches`,
/// weighted by masked positions. With `carry_state` each batch starts from
/// the previous batch's final state (streamed text).
pub fn evaluate(model: &Model, batches: &[Batch], carry_state: bool) -> Result<EvalMetrics, TrainingError> {
    let (mut nats, mut correct, mut counted) = (0.0, 0usize, 0usize);
    let mut state: Option<CellState> = None;
    for batch in batches {
        let init = if carry_state { state.as_ref() } else { None };
        let out = super::run_sequence_from(model, batch, init)?;
        nats += out.loss * out.counted as f64;
        correct += out.correct;
        counted += out.counted;
        state = Some(out.final_state);
    }
    let loss = if counted == 0 { 0.0 } else { nats / counted as f64 };
    let acc = if counted == 0 { 0.0 } else { correct as f64 / counted as f64 };
    Ok(EvalMetrics::from_nats(loss, acc))
}

/// Result of [`train_run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub checkpoint: Checkpoint,
}

/// Trains `config` to completion, collecting every record.
pub fn train_run(config: TrainConfig) -> Result<RunOutput, TrainingError> {
    let mut trainer = Trainer::new(config)?;
    let mut records = Vec::new();
    trainer.run(|r| {
        records.push(r.clone());
        ControlFlow::Continue(())
    })?;
    Ok(RunOutput { records, checkpoint: trainer.checkpoint() })
}

impl Checkpoint {
    pub fn resume(self) -> Result<Trainer, TrainingError> {
        Trainer::from_checkpoint(self)
    }

    pub fn load_trainer(path: &Path) -> Result<Trainer, TrainingError> {
        Trainer::from_checkpoint(Checkpoint::load(path)?)
    }
}
