//! Two-stage training.
//!
//! Stage 1 fits stream B's meta-network and context to the visual features
//! with the contrastive pretraining loss; every other parameter is frozen.
//! Stage 2 trains everything except the base encoder on the weighted
//! objective with warm-up. Moments are reset between stages.
//!
//! Batches are a pure function of `(seed, stage, step)`, so the whole run
//! state is the parameters, the optimizer moments and two counters; resuming
//! from a checkpoint replays the exact same steps.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{GradPolicy, Graph};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::Config;
use crate::data::{augment, Image};
use crate::error::{Error, Result};
use crate::losses::{total_graph, EffectiveWeights, LossReport, RawTerms};
use crate::model::{is_base, Sepl};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::prompts::Stream;

/// Which parameters a stage trains and for how many steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stage: u8,
    pub trainable: Vec<String>,
    pub steps: usize,
}

pub fn stage1_trainable(name: &str) -> bool {
    name.starts_with(&Stream::B.meta_prefix()) || name == Stream::B.context_name()
}

pub fn stage2_trainable(name: &str) -> bool {
    !is_base(name)
}

impl StagePlan {
    pub fn new(stage: u8, store: &ParamStore, config: &Config) -> Result<Self> {
        let (pred, steps): (fn(&str) -> bool, usize) = match stage {
            1 => (stage1_trainable, config.train.stage1_steps),
            2 => (stage2_trainable, config.train.stage2_steps),
            s => return Err(Error::InvalidArgument(format!("no stage {s}"))),
        };
        Ok(Self {
            stage,
            trainable: store.names().filter(|n| pred(n)).map(String::from).collect(),
            steps,
        })
    }

    pub fn policy(&self) -> GradPolicy {
        GradPolicy::Only(self.trainable.iter().cloned().collect())
    }

    /// Checksum over every parameter this stage must not change.
    pub fn frozen_checksum(&self, store: &ParamStore) -> String {
        let set: BTreeSet<&str> = self.trainable.iter().map(String::as_str).collect();
        store.checksum(|n| !set.contains(n))
    }
}

/// Source of training batches.
pub trait DataStream {
    /// Images and labels of the batch for `(stage, step)`, or `None` when exhausted.
    fn batch(&self, stage: u8, step: usize) -> Option<(Vec<Image>, Vec<u8>)>;
}

/// In-memory samples, reshuffled every epoch from `(seed, stage, epoch)`.
#[derive(Clone, Debug)]
pub struct InMemoryData {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    /// Stop after this many epochs per stage; `None` cycles forever.
    pub max_epochs: Option<usize>,
}

impl InMemoryData {
    pub fn new(images: Vec<Image>, labels: Vec<u8>, config: &Config) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape("training labels", images.len(), labels.len()));
        }
        if images.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 training samples, got {}",
                images.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            batch_size: config.train.batch_size,
            seed: config.train.seed,
            augment: config.train.augment,
            max_epochs: None,
        })
    }

    fn effective_batch(&self) -> usize {
        self.batch_size.min(self.images.len())
    }

    /// Sample indices of the batch for `(stage, step)`.
    pub fn indices(&self, stage: u8, step: usize) -> Option<Vec<usize>> {
        let b = self.effective_batch();
        let per_epoch = self.images.len() / b;
        let (epoch, k) = (step / per_epoch, step % per_epoch);
        if self.max_epochs.is_some_and(|m| epoch >= m) {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((stage as u64) << 48) | epoch as u64);
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(&mut rng);
        Some(order[k * b..(k + 1) * b].to_vec())
    }
}

fn mix(seed: u64, stage: u8, step: usize, i: usize) -> u64 {
    // splitmix64 finalizer over the packed coordinates
    let mut z = seed
        ^ ((stage as u64) << 56)
        ^ ((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ ((i as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DataStream for InMemoryData {
    fn batch(&self, stage: u8, step: usize) -> Option<(Vec<Image>, Vec<u8>)> {
        let idx = self.indices(stage, step)?;
        let images = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                if self.augment {
                    augment(&self.images[j], mix(self.seed, stage, step, i))
                } else {
                    self.images[j].clone()
                }
            })
            .collect();
        Some((images, idx.iter().map(|&j| self.labels[j]).collect()))
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: u8,
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Everything needed to continue a run.
#[derive(Debug)]
pub struct TrainState {
    pub model: Sepl,
    pub adam: Adam,
    pub stage: u8,
    /// Steps completed within `stage`.
    pub step: usize,
    pub skip_pretrain: bool,
    pub complete: bool,
    pub best_metric: Option<f64>,
}

fn adam_config(config: &Config) -> AdamConfig {
    AdamConfig {
        lr: config.train.learning_rate,
        weight_decay: config.train.weight_decay,
        grad_clip: config.train.grad_clip,
        ..AdamConfig::default()
    }
}

impl TrainState {
    pub fn new(config: Config) -> Result<Self> {
        let skip = config.train.skip_pretrain;
        let adam = Adam::new(adam_config(&config));
        Ok(Self {
            model: Sepl::new(config)?,
            adam,
            stage: if skip { 2 } else { 1 },
            step: 0,
            skip_pretrain: skip,
            complete: false,
            best_metric: None,
        })
    }

    pub fn config(&self) -> &Config {
        &self.model.config
    }

    pub fn plan(&self) -> Result<StagePlan> {
        StagePlan::new(self.stage, &self.model.store, self.config())
    }

    /// Keep the larger of the tracked and the given metric.
    pub fn record_metric(&mut self, value: f64) {
        self.best_metric = Some(self.best_metric.map_or(value, |b| b.max(value)));
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let cfg = self.config();
        Ok(Checkpoint {
            meta: CheckpointMeta {
                config: cfg.to_toml_string(),
                config_hash: cfg.hash(),
                seed: cfg.train.seed,
                stage: self.stage,
                step: self.step,
                adam_t: self.adam.t,
                skip_pretrain: self.skip_pretrain,
                complete: self.complete,
                best_metric: self.best_metric,
            },
            params: self.model.store.clone(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config = ck.config()?;
        if !(1..=2).contains(&ck.meta.stage) {
            return Err(Error::Checkpoint(format!("invalid stage {}", ck.meta.stage)));
        }
        let mut adam = Adam::new(adam_config(&config));
        adam.t = ck.meta.adam_t;
        adam.m = ck.adam_m;
        adam.v = ck.adam_v;
        Ok(Self {
            model: Sepl::from_store(config, ck.params)?,
            adam,
            stage: ck.meta.stage,
            step: ck.meta.step,
            skip_pretrain: ck.meta.skip_pretrain,
            complete: ck.meta.complete,
            best_metric: ck.meta.best_metric,
        })
    }

    fn advance_stage(&mut self) {
        if self.stage == 1 {
            self.stage = 2;
            self.step = 0;
            self.adam.reset();
        } else {
            self.complete = true;
        }
    }
}

/// Periodic checkpointing target.
#[derive(Clone, Debug)]
pub struct CheckpointEvery {
    pub every: usize,
    pub path: PathBuf,
}

/// Controls for one call into the trainer.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop (without error) after this many optimizer steps in this call.
    pub stop_after: Option<usize>,
    pub checkpoint: Option<CheckpointEvery>,
    /// JSONL training log.
    pub log: Option<&'a mut dyn Write>,
    /// Called with every record, after it is logged.
    pub on_step: Option<&'a mut dyn FnMut(&LogRecord)>,
}

/// Outcome of a call into the trainer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub steps_run: usize,
    pub stopped_early: bool,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

fn images_ref(images: &[Image]) -> Vec<&Image> {
    images.iter().collect()
}

/// One optimizer step of the current stage; returns the log record.
pub fn train_step(state: &mut TrainState, plan: &StagePlan, data: &dyn DataStream) -> Result<LogRecord> {
    let (stage, step) = (state.stage, state.step);
    let (images, labels) = data
        .batch(stage, step)
        .ok_or(Error::DataExhausted { stage, step })?;
    let refs = images_ref(&images);
    let model = &state.model;
    let mut g = Graph::with_policy(plan.policy());
    let (out, report) = if stage == 1 {
        let l = model.pretrain_loss(&mut g, &refs)?;
        (l, LossReport::pretraining(g.scalar(l)))
    } else {
        let terms = model.stage2_terms(&mut g, &refs, &labels)?;
        let w = EffectiveWeights::at(&model.config.loss, step, plan.steps)?;
        let total = total_graph(&mut g, &terms, &w);
        let raw = RawTerms {
            cls: g.scalar(terms.cls),
            dis: g.scalar(terms.dis),
            div: g.scalar(terms.div),
            align_specific: g.scalar(terms.align_specific),
            align_irrelevant: g.scalar(terms.align_irrelevant),
            con: g.scalar(terms.con),
        };
        (total, LossReport::from_terms(raw, w))
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite {
            stage,
            step,
            detail: serde_json::to_string(&report)?,
        });
    }
    let grads = g.backward(out);
    let named = g.param_grads(&grads);
    drop(g);
    let lr = state.adam.cfg.lr;
    let info = state
        .adam
        .step(&mut state.model.store, &plan.trainable, &named, lr)?;
    if !info.grad_norm.is_finite() {
        return Err(Error::NonFinite {
            stage,
            step,
            detail: format!("gradient norm {}", info.grad_norm),
        });
    }
    state.step += 1;
    Ok(LogRecord {
        stage,
        step,
        lr,
        grad_norm: info.grad_norm,
        loss: report,
    })
}

/// Run the current stage to completion (or until `stop_after`), verifying
/// that parameters outside the stage's trainable set are untouched.
pub fn run_stage(state: &mut TrainState, data: &dyn DataStream, opts: &mut RunOptions<'_>) -> Result<RunSummary> {
    let plan = state.plan()?;
    let frozen_before = plan.frozen_checksum(&state.model.store);
    let mut summary = RunSummary::default();
    while state.step < plan.steps {
        if opts.stop_after.is_some_and(|n| summary.steps_run >= n) {
            summary.stopped_early = true;
            break;
        }
        let rec = train_step(state, &plan, data)?;
        summary.steps_run += 1;
        summary.first_loss.get_or_insert(rec.loss.total);
        summary.last_loss = Some(rec.loss.total);
        if let Some(log) = opts.log.as_deref_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        if let Some(cb) = opts.on_step.as_deref_mut() {
            cb(&rec);
        }
        if let Some(c) = &opts.checkpoint {
            if c.every > 0 && state.step.is_multiple_of(c.every) && state.step < plan.steps {
                state.to_checkpoint()?.save(&c.path, true)?;
            }
        }
    }
    let frozen_after = plan.frozen_checksum(&state.model.store);
    if frozen_before != frozen_after {
        return Err(Error::InvalidArgument(format!(
            "stage {} modified frozen parameters",
            plan.stage
        )));
    }
    if !summary.stopped_early {
        state.advance_stage();
        if let Some(c) = &opts.checkpoint {
            if c.every > 0 {
                state.to_checkpoint()?.save(&c.path, true)?;
            }
        }
    }
    Ok(summary)
}

/// Stage 1 only; a no-op when the state is past it.
pub fn run_stage1(state: &mut TrainState, data: &dyn DataStream, opts: &mut RunOptions<'_>) -> Result<RunSummary> {
    if state.stage != 1 {
        return Ok(RunSummary::default());
    }
    run_stage(state, data, opts)
}

/// Stage 2; the state must have finished (or skipped) stage 1.
pub fn run_stage2(state: &mut TrainState, data: &dyn DataStream, opts: &mut RunOptions<'_>) -> Result<RunSummary> {
    if state.stage != 2 || state.complete {
        return Err(Error::InvalidArgument(format!(
            "stage 2 needs a state at stage 2, got stage {} (complete: {})",
            state.stage, state.complete
        )));
    }
    run_stage(state, data, opts)
}

/// Both stages from wherever `state` is. Honors `stop_after` across stages.
pub fn train(state: &mut TrainState, data: &dyn DataStream, opts: &mut RunOptions<'_>) -> Result<RunSummary> {
    let mut total = RunSummary::default();
    let budget = opts.stop_after;
    while !state.complete {
        if let Some(b) = budget {
            let left = b.saturating_sub(total.steps_run);
            if left == 0 {
                total.stopped_early = true;
                break;
            }
            opts.stop_after = Some(left);
        }
        let s = run_stage(state, data, opts)?;
        total.steps_run += s.steps_run;
        total.first_loss = total.first_loss.or(s.first_loss);
        total.last_loss = s.last_loss.or(total.last_loss);
        if s.stopped_early {
            total.stopped_early = true;
            break;
        }
    }
    opts.stop_after = budget;
    Ok(total)
}

/// Convenience: fresh state, full two-stage run on in-memory data.
pub fn fit(config: Config, images: Vec<Image>, labels: Vec<u8>) -> Result<TrainState> {
    let data = InMemoryData::new(images, labels, &config)?;
    let mut state = TrainState::new(config)?;
    train(&mut state, &data, &mut RunOptions::default())?;
    Ok(state)
}
