//! Teacher-forced training with Adam, step-decayed learning rate, token-count
//! batching and dev-set model selection.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::Document;
use crate::infer::{evaluate, DecodeOptions, InferError};
use crate::metrics::EvalReport;
use crate::nn::{save_checkpoint, CheckpointError, Gradients, Model, ModelError, ParamSet, ParseMode, Real};

mod adam;

pub use adam::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub batch_size_tokens: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mode: ParseMode,
    pub beam_width_eval: usize,
    pub sentence_guidance: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Fraction of the training corpus held out when no dev corpus is given.
    pub dev_fraction: f64,
    pub dev_seed: u64,
    /// Stop once dev Full F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            decay_rate: 0.75,
            decay_every: 5000,
            batch_size_tokens: 10000,
            max_epochs: 50,
            seed: 0,
            mode: ParseMode::EndToEnd,
            beam_width_eval: 20,
            sentence_guidance: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            dev_fraction: 0.1,
            dev_seed: 0,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be a finite non-negative number", self.learning_rate));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay_rate {} not in (0, 1]", self.decay_rate));
        }
        if self.decay_every == 0 || self.batch_size_tokens == 0 || self.beam_width_eval == 0 {
            return bad("decay_every, batch_size_tokens and beam_width_eval must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("beta1 and beta2 must lie in [0, 1) and epsilon must be positive".into());
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad(format!("dev_fraction {} not in [0, 1)", self.dev_fraction));
        }
        Ok(())
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            mode: self.mode,
            beam: self.beam_width_eval,
            sentence_guidance: self.sentence_guidance,
            e2e_beam: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss at step {step} on document `{doc}`")]
    NonFinite { step: usize, doc: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// `lr * decay^floor(step / decay_every)`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.learning_rate * cfg.decay_rate.powi((step / cfg.decay_every) as i32)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Shuffles document indices with a per-epoch seed and packs them greedily:
/// a batch is closed when the next document would push it over
/// `batch_size_tokens`. A document larger than the cap forms its own batch.
pub fn make_batches(docs: &[Document], cfg: &TrainConfig, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for idx in order {
        let len = docs[idx].len();
        if !current.is_empty() && tokens + len > cfg.batch_size_tokens {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(idx);
        tokens += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Splits off a random `fraction` of `docs` (at least one document when the
/// corpus has two or more) as a dev set.
pub fn split_dev(docs: Vec<Document>, fraction: f64, seed: u64) -> (Vec<Document>, Vec<Document>) {
    let n = docs.len();
    let k = if n < 2 || fraction <= 0.0 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..k] {
        is_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (doc, d) in docs.into_iter().zip(is_dev) {
        if d {
            dev.push(doc);
        } else {
            train.push(doc);
        }
    }
    (train, dev)
}

/// One optimizer step's log record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss_s: f64,
    pub loss_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub dev: Option<EvalReport>,
    pub improved: bool,
}

pub enum TrainEvent<'a> {
    Step(&'a StepLog),
    Epoch(&'a EpochLog),
}

/// Single-writer optimizer loop around a model.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    adam: Adam<T>,
    step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.check()?;
        let adam = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.epsilon);
        Ok(Trainer { model, cfg, adam, step: 0 })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Sums the losses and gradients of `batch`, clips and applies one Adam
    /// update. Gradients are reduced in batch order so results do not depend
    /// on thread scheduling.
    pub fn train_batch(&mut self, docs: &[Document], batch: &[usize]) -> Result<StepLog, TrainError> {
        let mode = self.cfg.mode;
        let model = &self.model;
        let (seed, step) = (self.cfg.seed, self.step);
        let results: Vec<_> = batch
            .par_iter()
            .map(|&idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((step as u64) << 20) ^ idx as u64);
                let dropout = (model.config.dropout > 0.0).then_some(&mut rng);
                model.total_loss(&docs[idx], mode, dropout)
            })
            .collect();
        let mut grads = Gradients::zeros_like(&self.model.params);
        let (mut loss_s, mut loss_l) = (0.0, 0.0);
        for (&idx, r) in batch.iter().zip(results) {
            let (s, l, g) = r?;
            let (s, l) = (s.to_f64().unwrap(), l.to_f64().unwrap());
            if !s.is_finite() || !l.is_finite() || !g.is_finite() {
                return Err(TrainError::NonFinite { step: self.step, doc: docs[idx].id.clone() });
            }
            loss_s += s;
            loss_l += l;
            grads.add_assign(&g);
        }
        if self.cfg.clip_norm > 0.0 {
            let norm = grads.global_norm().to_f64().unwrap();
            if norm > self.cfg.clip_norm {
                grads.scale(T::of(self.cfg.clip_norm / norm));
            }
        }
        let lr = lr_at(self.step, &self.cfg);
        self.adam.update(&mut self.model.params, &grads, T::of(lr));
        let log = StepLog { step: self.step, lr, loss_s, loss_l };
        self.step += 1;
        Ok(log)
    }

    /// One pass over `docs` in the epoch's batch order.
    pub fn run_epoch(
        &mut self,
        docs: &[Document],
        epoch: usize,
        on_step: &mut dyn FnMut(&StepLog),
    ) -> Result<Vec<StepLog>, TrainError> {
        let mut logs = Vec::new();
        for batch in make_batches(docs, &self.cfg, self.cfg.seed, epoch) {
            let log = self.train_batch(docs, &batch)?;
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.model.params
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_f1: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

/// Trains for up to `max_epochs`, evaluating dev Full F1 after each epoch
/// and writing a checkpoint whenever it improves.
pub fn train(
    model: Model<f32>,
    train_docs: &[Document],
    dev_docs: &[Document],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    on_event: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<(Model<f32>, TrainReport), TrainError> {
    if train_docs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let opts = cfg.decode_options();
    let mut report = TrainReport { epochs: Vec::new(), best_epoch: None, best_f1: None, checkpoint: None };
    let mut best_model = None;
    for epoch in 0..cfg.max_epochs {
        let steps = trainer.run_epoch(train_docs, epoch, &mut |s| on_event(TrainEvent::Step(s)))?;
        let total: f64 = steps.iter().map(|s| s.loss_s + s.loss_l).sum();
        let dev = if dev_docs.is_empty() { None } else { Some(evaluate(&trainer.model, dev_docs, &opts)?) };
        let f1 = dev.map(|d| d.parseval.full_f1);
        let improved = match (f1, report.best_f1) {
            (Some(f), Some(b)) => f > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            report.best_epoch = Some(epoch);
            report.best_f1 = f1;
            if let Some(path) = checkpoint {
                save_checkpoint(&trainer.model, path)?;
                report.checkpoint = Some(path.to_path_buf());
            }
            best_model = Some(trainer.model.clone());
        }
        let log = EpochLog { epoch, steps: steps.len(), mean_loss: total / train_docs.len() as f64, dev, improved };
        on_event(TrainEvent::Epoch(&log));
        report.epochs.push(log);
        if let (Some(target), Some(f)) = (cfg.target_f1, f1) {
            if f >= target {
                break;
            }
        }
    }
    let model = best_model.unwrap_or(trainer.model);
    if report.checkpoint.is_none() {
        if let Some(path) = checkpoint {
            save_checkpoint(&model, path)?;
            report.checkpoint = Some(path.to_path_buf());
        }
    }
    Ok((model, report))
}
