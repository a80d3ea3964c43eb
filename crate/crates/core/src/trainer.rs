//! Optimization with the triple stopping rule (update limit, epoch limit,
//! early stopping on dev BLEU), periodic evaluation and continued training.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bleu::corpus_bleu;
use crate::checkpoint::{LineageEntry, ModelCheckpoint, Provenance, NOT_DISTILLED, RANDOM_INIT};
use crate::corpus::{CorpusOrigin, ParallelCorpus};
use crate::decoder::{check_vocab, decode_ids, BeamConfig};
use crate::error::{Error, Result};
use crate::nnet::{loss_and_gradients, ArchConfig, Batch, LossOptions, Tensor, TransformerModel};
use crate::tokenizer::{detokenize_tokens, BpeModel};

/// Linear warmup to `peak`, then inverse-square-root decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_updates: u64,
}

impl LrSchedule {
    /// Rate for update `t` (1-based).
    pub fn rate(&self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        let w = self.warmup_updates.max(1) as f64;
        if t <= w {
            self.peak * t / w
        } else {
            self.peak * (w / t).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, scaled by the learning rate.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns the learning rate used. A
/// non-finite gradient aborts before anything is modified.
pub fn optimizer_step(
    params: &mut [Tensor],
    names: &[String],
    grads: &[Tensor],
    state: &mut OptimizerState,
    adam: &AdamConfig,
    schedule: &LrSchedule,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Alignment {
            what: "parameter and gradient counts".into(),
            left: params.len(),
            right: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::validation(
                names.get(i).map_or("gradient", String::as_str),
                format!("gradient shape {:?} differs from {:?}", g.shape(), p.shape()),
            ));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                parameter: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
                update: state.t as usize + 1,
            });
        }
    }
    state.t += 1;
    let t = state.t;
    let lr = schedule.rate(t);
    let c1 = 1.0 - adam.beta1.powi(t as i32);
    let c2 = 1.0 - adam.beta2.powi(t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * gj;
            v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * (mhat / (vhat.sqrt() + adam.eps) + adam.weight_decay * *w);
        }
    }
    Ok(lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StopReason {
    MaxUpdates,
    MaxEpochs,
    EarlyStop,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxUpdates => "max_updates",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
        })
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_updates" => Ok(StopReason::MaxUpdates),
            "max_epochs" => Ok(StopReason::MaxEpochs),
            "early_stop" => Ok(StopReason::EarlyStop),
            _ => Err(Error::validation("stop_reason", format!("unknown reason {s:?}"))),
        }
    }
}

pub const DESK_MAX_UPDATES: u64 = 5_000;
pub const FULL_SCALE_MAX_UPDATES: u64 = 300_000;
pub const DEFAULT_MAX_EPOCHS: u64 = 100;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DESK_CHECKPOINT_INTERVAL: u64 = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_updates: u64,
    pub max_epochs: u64,
    pub patience_checkpoints: usize,
    pub checkpoint_interval_updates: u64,
    /// Upper bound on padded tokens (`sentences * longest side + 1`) per
    /// batch; a single longer pair still forms its own batch.
    pub batch_tokens: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Decoding used for dev BLEU.
    pub dev_beam: BeamConfig,
    pub decode_threads: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            max_updates: DESK_MAX_UPDATES,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience_checkpoints: DEFAULT_PATIENCE,
            checkpoint_interval_updates: DESK_CHECKPOINT_INTERVAL,
            batch_tokens: 1024,
            schedule: LrSchedule {
                peak: 5e-3,
                warmup_updates: 200,
            },
            adam: AdamConfig::default(),
            label_smoothing: 0.1,
            seed: 1,
            dev_beam: BeamConfig::default(),
            decode_threads: 1,
        }
    }

    pub fn full_scale() -> Self {
        TrainConfig {
            max_updates: FULL_SCALE_MAX_UPDATES,
            checkpoint_interval_updates: 1_000,
            batch_tokens: 4096,
            schedule: LrSchedule {
                peak: 7e-4,
                warmup_updates: 4_000,
            },
            ..TrainConfig::desk()
        }
    }

    /// `allow_zero_updates` admits `max_updates = 0` for runs that start
    /// from a checkpoint (they are evaluated before any update).
    pub fn validate(&self, allow_zero_updates: bool) -> Result<()> {
        if self.max_updates == 0 && !allow_zero_updates {
            return Err(Error::validation("max_updates", "must be >= 1"));
        }
        let counts = [
            ("max_epochs", self.max_epochs as usize),
            ("patience_checkpoints", self.patience_checkpoints),
            ("checkpoint_interval_updates", self.checkpoint_interval_updates as usize),
            ("batch_tokens", self.batch_tokens),
            ("warmup_updates", self.schedule.warmup_updates as usize),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::validation(field, "must be >= 1"));
            }
        }
        if !(self.schedule.peak >= 0.0) || !self.schedule.peak.is_finite() {
            return Err(Error::validation("learning_rate", "peak must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::validation("label_smoothing", "must be within [0, 1)"));
        }
        self.dev_beam.validate()
    }
}

/// The three stopping criteria as a state machine fed with training events.
#[derive(Clone, Debug)]
pub struct StopMonitor {
    max_updates: u64,
    max_epochs: u64,
    patience: usize,
    best: Option<(usize, f64)>,
    checkpoints: usize,
}

impl StopMonitor {
    pub fn new(max_updates: u64, max_epochs: u64, patience: usize) -> Self {
        StopMonitor {
            max_updates,
            max_epochs,
            patience,
            best: None,
            checkpoints: 0,
        }
    }

    /// Records a dev score; returns true if it is a new best. Ties keep the
    /// earlier checkpoint.
    pub fn record(&mut self, score: f64) -> bool {
        let idx = self.checkpoints;
        self.checkpoints += 1;
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((idx, score));
        }
        improved
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn checkpoints(&self) -> usize {
        self.checkpoints
    }

    /// Checkpoints recorded since the best one.
    pub fn since_best(&self) -> usize {
        self.best.map_or(0, |(i, _)| self.checkpoints - 1 - i)
    }

    pub fn update_limit_reached(&self, updates: u64) -> bool {
        updates >= self.max_updates
    }

    pub fn epoch_limit_reached(&self, epochs: u64) -> bool {
        epochs >= self.max_epochs
    }

    pub fn patience_exhausted(&self) -> bool {
        self.since_best() >= self.patience
    }
}

/// One dev evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub index: usize,
    pub updates: u64,
    pub epoch: u64,
    pub dev_bleu: f64,
    /// Mean gold-token NLL of the updates since the previous checkpoint.
    pub train_nll: Option<f64>,
}

/// What the schedule loop produced.
#[derive(Clone, Debug)]
pub struct LoopOutcome<T> {
    pub history: Vec<CheckpointRecord>,
    pub stop_reason: StopReason,
    pub best_index: usize,
    pub best: T,
    pub updates: u64,
    pub epochs: u64,
}

/// Drives training: `update(update_number, epoch, batch_index)` performs one
/// update and returns its training NLL; `evaluate(updates, epoch)` returns a
/// dev score and a snapshot kept if it is the best so far.
///
/// Evaluations happen every `checkpoint_interval_updates`, at update 0 when
/// `evaluate_initial` is set, and when a limit ends training between
/// checkpoints. Criteria are checked in the order they become true: the
/// update limit as soon as an update completes, early stopping after each
/// evaluation, the epoch limit at the end of an epoch.
pub fn run_schedule<T>(
    config: &TrainConfig,
    batches_per_epoch: usize,
    evaluate_initial: bool,
    mut update: impl FnMut(u64, u64, usize) -> Result<f64>,
    mut evaluate: impl FnMut(u64, u64) -> Result<(f64, T)>,
) -> Result<LoopOutcome<T>> {
    if batches_per_epoch == 0 {
        return Err(Error::validation("train_corpus", "no batches"));
    }
    let mut monitor = StopMonitor::new(config.max_updates, config.max_epochs, config.patience_checkpoints);
    let mut history = Vec::new();
    let mut best: Option<T> = None;
    let mut nll_sum = 0.0;
    let mut nll_n = 0usize;
    let mut checkpoint = |updates: u64,
                          epoch: u64,
                          nll_sum: &mut f64,
                          nll_n: &mut usize,
                          monitor: &mut StopMonitor,
                          history: &mut Vec<CheckpointRecord>,
                          best: &mut Option<T>|
     -> Result<()> {
        let (score, snap) = evaluate(updates, epoch)?;
        let index = monitor.checkpoints();
        if monitor.record(score) {
            *best = Some(snap);
        }
        history.push(CheckpointRecord {
            index,
            updates,
            epoch,
            dev_bleu: score,
            train_nll: (*nll_n > 0).then(|| *nll_sum / *nll_n as f64),
        });
        *nll_sum = 0.0;
        *nll_n = 0;
        Ok(())
    };
    let mut updates = 0u64;
    let mut epoch = 0u64;
    let mut last_eval: Option<u64> = None;
    let reason = 'train: {
        if evaluate_initial {
            checkpoint(0, 0, &mut nll_sum, &mut nll_n, &mut monitor, &mut history, &mut best)?;
            last_eval = Some(0);
        }
        if monitor.update_limit_reached(0) {
            if last_eval.is_none() {
                checkpoint(0, 0, &mut nll_sum, &mut nll_n, &mut monitor, &mut history, &mut best)?;
            }
            break 'train StopReason::MaxUpdates;
        }
        loop {
            for b in 0..batches_per_epoch {
                updates += 1;
                nll_sum += update(updates, epoch, b)?;
                nll_n += 1;
                let due = updates % config.checkpoint_interval_updates == 0;
                let at_limit = monitor.update_limit_reached(updates);
                if due || at_limit {
                    checkpoint(updates, epoch, &mut nll_sum, &mut nll_n, &mut monitor, &mut history, &mut best)?;
                    last_eval = Some(updates);
                }
                if at_limit {
                    break 'train StopReason::MaxUpdates;
                }
                if due && monitor.patience_exhausted() {
                    break 'train StopReason::EarlyStop;
                }
            }
            epoch += 1;
            if monitor.epoch_limit_reached(epoch) {
                if last_eval != Some(updates) {
                    checkpoint(updates, epoch, &mut nll_sum, &mut nll_n, &mut monitor, &mut history, &mut best)?;
                }
                break 'train StopReason::MaxEpochs;
            }
        }
    };
    let (best_index, _) = monitor.best().expect("at least one evaluation");
    Ok(LoopOutcome {
        history,
        stop_reason: reason,
        best_index,
        best: best.expect("best snapshot recorded"),
        updates,
        epochs: epoch,
    })
}

pub const TRAIN_REPORT_HEADER: &str = "#seqkd-train-report v1";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub best: ModelCheckpoint,
    pub history: Vec<CheckpointRecord>,
    pub stop_reason: StopReason,
    pub updates: u64,
    pub epochs: u64,
    /// Origin of the training corpus.
    pub trained_on: CorpusOrigin,
}

impl TrainReport {
    pub fn best_checkpoint_id(&self) -> &str {
        self.best.id()
    }

    pub fn best_dev_bleu(&self) -> f64 {
        self.best.dev_bleu()
    }

    /// `(updates, dev BLEU)` per evaluation.
    pub fn dev_history(&self) -> Vec<(u64, f64)> {
        self.history.iter().map(|r| (r.updates, r.dev_bleu)).collect()
    }

    /// Line-oriented log: one `checkpoint <n> updates <u> dev_bleu <b>` line
    /// per evaluation, then summary keys.
    pub fn to_log(&self) -> String {
        let mut s = format!("{TRAIN_REPORT_HEADER}\n");
        for r in &self.history {
            s.push_str(&format!("checkpoint {} updates {} dev_bleu {}\n", r.index, r.updates, r.dev_bleu));
        }
        s.push_str(&format!("best_checkpoint {}\n", self.best.id()));
        s.push_str(&format!("best_dev_bleu {}\n", self.best.dev_bleu()));
        s.push_str(&format!("stop_reason {}\n", self.stop_reason));
        s.push_str(&format!("updates {}\nepochs {}\n", self.updates, self.epochs));
        match &self.trained_on {
            CorpusOrigin::Original => s.push_str("trained_on original\n"),
            CorpusOrigin::Distilled {
                teacher_id,
                beam_size,
                original_id,
            } => s.push_str(&format!("trained_on distilled {teacher_id} {beam_size} {original_id}\n")),
        }
        s
    }

    /// Parses [`TrainReport::to_log`] output; `best` must be the checkpoint
    /// the log names.
    pub fn from_log(text: &str, best: ModelCheckpoint, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(TRAIN_REPORT_HEADER) {
            return Err(Error::format(path, 1, format!("expected header {TRAIN_REPORT_HEADER:?}")));
        }
        let mut history = Vec::new();
        let (mut stop, mut updates, mut epochs, mut origin, mut best_id) = (None, None, None, None, None);
        for (i, line) in lines {
            let bad = || Error::format(path, i + 1, format!("unrecognized line {line:?}"));
            let f: Vec<&str> = line.split(' ').collect();
            match f[..] {
                ["checkpoint", n, "updates", u, "dev_bleu", b] => history.push(CheckpointRecord {
                    index: n.parse().map_err(|_| bad())?,
                    updates: u.parse().map_err(|_| bad())?,
                    epoch: 0,
                    dev_bleu: b.parse().map_err(|_| bad())?,
                    train_nll: None,
                }),
                ["best_checkpoint", id] => best_id = Some(id.to_owned()),
                ["best_dev_bleu", _] => {}
                ["stop_reason", r] => stop = Some(r.parse()?),
                ["updates", u] => updates = Some(u.parse().map_err(|_| bad())?),
                ["epochs", e] => epochs = Some(e.parse().map_err(|_| bad())?),
                ["trained_on", "original"] => origin = Some(CorpusOrigin::Original),
                ["trained_on", "distilled", t, b, o] => {
                    origin = Some(CorpusOrigin::Distilled {
                        teacher_id: t.to_owned(),
                        beam_size: b.parse().map_err(|_| bad())?,
                        original_id: o.to_owned(),
                    })
                }
                _ => return Err(bad()),
            }
        }
        let missing = |k: &str| Error::format(path, 0, format!("missing {k}"));
        if best_id.as_deref() != Some(best.id()) {
            return Err(Error::protocol(format!(
                "{} names checkpoint {:?}, found {}",
                path.display(),
                best_id,
                best.id()
            )));
        }
        Ok(TrainReport {
            best,
            history,
            stop_reason: stop.ok_or_else(|| missing("stop_reason"))?,
            updates: updates.ok_or_else(|| missing("updates"))?,
            epochs: epochs.ok_or_else(|| missing("epochs"))?,
            trained_on: origin.ok_or_else(|| missing("trained_on"))?,
        })
    }
}

/// Groups pairs into length-sorted batches bounded by `batch_tokens`.
pub fn make_batches(lengths: &[(usize, usize)], batch_tokens: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i].0, lengths[i].1, i));
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let l = lengths[i].0.max(lengths[i].1 + 1);
        let new_longest = longest.max(l);
        if !cur.is_empty() && (cur.len() + 1) * new_longest > batch_tokens {
            batches.push(std::mem::take(&mut cur));
            longest = l;
        } else {
            longest = new_longest;
        }
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Dev BLEU of `model` after detokenizing hypotheses and references.
pub fn dev_bleu(model: &TransformerModel, bpe: &BpeModel, dev: &DevSet, beam: &BeamConfig, threads: usize) -> Result<f64> {
    let hyps = decode_ids(model, &dev.sources, beam, threads)?;
    let vocab = bpe.vocab();
    let words: Vec<Vec<String>> = hyps.iter().map(|h| detokenize_tokens(&vocab.decode(h.content()))).collect();
    Ok(corpus_bleu(&words, &dev.references)?.bleu)
}

/// Dev corpus prepared for repeated evaluation.
pub struct DevSet {
    pub sources: Vec<Vec<u32>>,
    pub references: Vec<Vec<String>>,
}

impl DevSet {
    pub fn new(bpe: &BpeModel, dev: &ParallelCorpus) -> Result<Self> {
        if dev.is_empty() {
            return Err(Error::validation("dev_corpus", "dev corpus is empty"));
        }
        if dev.origin().is_distilled() {
            return Err(Error::protocol(format!(
                "dev corpus {} holds teacher outputs; dev BLEU must use original references",
                dev.name()
            )));
        }
        bpe.check_encoded(dev, &format!("dev corpus {}", dev.name()))?;
        let vocab = bpe.vocab();
        Ok(DevSet {
            sources: dev.pairs().iter().map(|p| vocab.encode(p.source())).collect(),
            references: dev.pairs().iter().map(|p| detokenize_tokens(p.target())).collect(),
        })
    }
}

/// Where a run's weights come from.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Random { model: &'a TransformerModel, seed: u64 },
    Checkpoint(&'a ModelCheckpoint),
}

fn run(init: Init<'_>, bpe: &BpeModel, train_corpus: &ParallelCorpus, dev: &ParallelCorpus, config: &TrainConfig) -> Result<TrainReport> {
    let from_checkpoint = matches!(init, Init::Checkpoint(_));
    config.validate(from_checkpoint)?;
    let (mut model, initialized_from, ancestors, model_seed): (TransformerModel, String, Vec<LineageEntry>, u64) = match init {
        Init::Random { model, seed } => (model.clone(), RANDOM_INIT.into(), Vec::new(), seed),
        Init::Checkpoint(c) => {
            if c.vocab_id() != bpe.id() {
                return Err(Error::protocol(format!(
                    "checkpoint {} uses vocabulary {}, expected {}",
                    c.id(),
                    c.vocab_id(),
                    bpe.id()
                )));
            }
            (c.model().clone(), c.id().into(), c.child_ancestors(), c.seed())
        }
    };
    check_vocab(&model, bpe, train_corpus)?;
    if train_corpus.is_empty() {
        return Err(Error::validation("train_corpus", "training corpus is empty"));
    }
    let dev_set = DevSet::new(bpe, dev)?;
    let vocab = bpe.vocab();
    let sources: Vec<Vec<u32>> = train_corpus.pairs().iter().map(|p| vocab.encode(p.source())).collect();
    let targets: Vec<Vec<u32>> = train_corpus.pairs().iter().map(|p| vocab.encode(p.target())).collect();
    let lengths: Vec<(usize, usize)> = sources.iter().zip(&targets).map(|(s, t)| (s.len(), t.len())).collect();
    let batches = make_batches(&lengths, config.batch_tokens);
    let provenance = Provenance {
        initialized_from,
        trained_on: train_corpus.id(),
        distilled_by: match train_corpus.origin() {
            CorpusOrigin::Distilled { teacher_id, .. } => teacher_id.clone(),
            CorpusOrigin::Original => NOT_DISTILLED.into(),
        },
    };
    let mut state = OptimizerState::new(model.params());
    let names = model.names().to_vec();
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let model_cell = std::cell::RefCell::new(&mut model);
    let outcome = run_schedule(
        config,
        batches.len(),
        from_checkpoint,
        |u, epoch, b| {
            if b == 0 {
                order = (0..batches.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                order.shuffle(&mut rng);
            }
            let idx = &batches[order[b]];
            let batch = Batch {
                source: idx.iter().map(|&i| sources[i].clone()).collect(),
                target: idx.iter().map(|&i| targets[i].clone()).collect(),
            };
            let opts = LossOptions {
                label_smoothing: config.label_smoothing,
                dropout_seed: Some(config.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ u),
            };
            let mut m = model_cell.borrow_mut();
            let out = loss_and_gradients(&m, &batch, &opts)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    parameter: "loss".into(),
                    update: u as usize,
                });
            }
            optimizer_step(m.params_mut(), &names, &out.gradients, &mut state, &config.adam, &config.schedule)?;
            Ok(out.nll)
        },
        |u, epoch| {
            let m = model_cell.borrow();
            let mut snapshot = (**m).clone();
            snapshot.round_to_f32();
            let score = dev_bleu(&snapshot, bpe, &dev_set, &config.dev_beam, config.decode_threads)?;
            log::debug!("updates {u} epoch {epoch} dev_bleu {score:.2}");
            Ok((score, (snapshot, u, epoch, score)))
        },
    )?;
    let (snapshot, u, epoch, score) = outcome.best;
    let best = ModelCheckpoint::new(snapshot, bpe.id(), model_seed, u, epoch, score, provenance, ancestors);
    Ok(TrainReport {
        best,
        history: outcome.history,
        stop_reason: outcome.stop_reason,
        updates: outcome.updates,
        epochs: outcome.epochs,
        trained_on: train_corpus.origin().clone(),
    })
}

/// Trains a freshly built model (`seed` is the seed it was built with).
pub fn train(
    model: &TransformerModel,
    seed: u64,
    bpe: &BpeModel,
    train_corpus: &ParallelCorpus,
    dev_corpus: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<TrainReport> {
    run(Init::Random { model, seed }, bpe, train_corpus, dev_corpus, config)
}

/// Continued training: starts from `parent`'s weights with a fresh optimizer
/// and schedule. The parent itself is evaluated as checkpoint 0, so the best
/// checkpoint is never worse than the starting point on this dev set.
pub fn adapt(
    parent: &ModelCheckpoint,
    arch: &ArchConfig,
    bpe: &BpeModel,
    train_corpus: &ParallelCorpus,
    dev_corpus: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if parent.arch() != arch {
        return Err(Error::protocol(format!(
            "cannot continue a {} checkpoint as {}",
            describe(parent.arch()),
            describe(arch)
        )));
    }
    run(Init::Checkpoint(parent), bpe, train_corpus, dev_corpus, config)
}

/// Runs training from either kind of initialization.
pub fn train_from(
    init: Init<'_>,
    bpe: &BpeModel,
    train_corpus: &ParallelCorpus,
    dev_corpus: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<TrainReport> {
    run(init, bpe, train_corpus, dev_corpus, config)
}

pub fn describe(a: &ArchConfig) -> String {
    format!(
        "{}(layers={}, ff={}, hidden={}, heads={}, scale=1/{})",
        a.size_class, a.total_layers, a.ff_dim, a.hidden_dim, a.num_heads, a.scale_factor
    )
}
