//! Training loop, evaluation and experiment drivers.

mod ablation;
mod metrics;

use std::time::Instant;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use ablation::{AblationReport, Variant, count_wins, default_variants, run_ablation};
pub use metrics::{ReportFormat, ReportRow, RunReport, emit_report, mpce, parse_report_csv, pce};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::model::{AdaFsNet, Mode, ModelConfig, batch_tensor, preserved_kernel_sizes};
use crate::param::Adam;
use crate::plan::{PlannerConfig, select_pk};
use crate::real::Real;
use crate::tape::Tape;
use crate::targetdrop::AttentionStats;

/// Mixed into the run seed for the dense-block rebuild.
const RESPECIALIZE_SALT: u64 = 0x5eed_0f_de75e;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs of attention calibration before the dense blocks are rebuilt.
    pub warmup_epochs: usize,
    /// Stop once the epoch loss has not improved for this many epochs
    /// (counted only after respecialisation).
    pub early_stop_patience: Option<usize>,
    /// Stop as soon as an epoch reaches this training accuracy (after respecialisation).
    pub target_train_accuracy: Option<f64>,
    /// Return the parameters from the lowest-loss epoch instead of the last.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 16,
            max_epochs: 1500,
            seed: 0,
            warmup_epochs: 20,
            early_stop_patience: None,
            target_train_accuracy: None,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dense_block_count: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.max_epochs < self.warmup_epochs {
            return Err(Error::Config(format!(
                "max_epochs ({}) must be >= warmup_epochs ({})",
                self.max_epochs, self.warmup_epochs
            )));
        }
        if dense_block_count > 0 && self.warmup_epochs == 0 {
            return Err(Error::Config("warmup_epochs must be >= 1 when dense blocks are present".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub preserved_kernels: Option<Vec<usize>>,
    /// Epoch after which the dense blocks were rebuilt.
    pub respecialized_at: Option<usize>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.train_accuracy));
        }
        out
    }
}

/// Shuffled mini-batches; a trailing singleton joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("nonempty") = &order[start..];
    }
    out
}

fn check_compat<T: Real>(model: &AdaFsNet<T>, data: &TimeSeriesDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset(format!("{}: no samples", data.name)));
    }
    if data.num_classes() != model.cfg.num_classes {
        return Err(Error::Dataset(format!(
            "{}: {} classes but the model head has {}",
            data.name,
            data.num_classes(),
            model.cfg.num_classes
        )));
    }
    if data.dims != model.cfg.input_dims {
        return Err(Error::Dataset(format!(
            "{}: {} dimensions but the model expects {}",
            data.name, data.dims, model.cfg.input_dims
        )));
    }
    if data.is_ragged() {
        return Err(Error::Dataset(format!("{}: series must be padded to a common length", data.name)));
    }
    Ok(())
}

fn input<T: Real>(data: &TimeSeriesDataset, idx: &[usize]) -> Result<crate::tensor::Tensor<T>> {
    let samples: Vec<&[Vec<f64>]> = idx.iter().map(|&i| data.samples[i].values.as_slice()).collect();
    batch_tensor(&samples)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn train<T: Real>(model: &mut AdaFsNet<T>, data: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real>(
    model: &mut AdaFsNet<T>,
    data: &TimeSeriesDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate(model.dense.len())?;
    check_compat(model, data)?;
    let adam = Adam::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = AttentionStats::new(model.os_channels());
    let mut outcome = TrainOutcome {
        history: Vec::new(),
        preserved_kernels: None,
        respecialized_at: None,
        stopped_early: false,
    };
    let needs_respecialize = !model.dense.is_empty();
    let mut best: Option<(f64, AdaFsNet<T>)> = None;
    let mut since_best = 0usize;
    let mut best_loss = f64::INFINITY;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let calibrating = needs_respecialize && outcome.respecialized_at.is_none();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in batches(&order, cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| data.samples[i].label).collect();
            let mut tape = Tape::new();
            let x = tape.constant(input(data, batch)?);
            let fwd = model.forward(&mut tape, x, Mode::Train)?;
            let loss = tape.softmax_cross_entropy(fwd.logits, &labels)?;
            let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("loss {value} on a batch of {}", batch.len()),
                });
            }
            loss_sum += value * batch.len() as f64;
            let logits = tape.value(fwd.logits).data();
            let c = model.cfg.num_classes;
            correct += labels
                .iter()
                .enumerate()
                .filter(|(b, l)| argmax(&logits[b * c..(b + 1) * c]) == **l)
                .count();
            if calibrating {
                if let Some(att) = fwd.attention {
                    stats.observe(tape.value(att).data())?;
                }
            }
            let grads = tape.backward(loss)?;
            for p in model.parameters_mut() {
                p.accumulate(&tape, &grads);
            }
            adam.step(model.parameters_mut());
            model.apply_bn_updates(fwd.bn_updates);
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        outcome.history.push(record);
        on_epoch(&record);

        if calibrating && epoch == cfg.warmup_epochs {
            let mean = if model.targetdrop.is_some() {
                stats.mean()
            } else {
                vec![1.0; model.os_channels()]
            };
            let preserved = preserved_kernel_sizes(&model.attribution, &mean, model.cfg.dense_kernel_count)?;
            model.respecialize_dense_blocks(&preserved, cfg.seed ^ RESPECIALIZE_SALT)?;
            outcome.preserved_kernels = Some(preserved);
            outcome.respecialized_at = Some(epoch);
            // Losses from before the rebuild are not comparable.
            best = None;
            best_loss = f64::INFINITY;
            since_best = 0;
            continue;
        }
        if needs_respecialize && outcome.respecialized_at.is_none() {
            continue;
        }
        if record.loss < best_loss {
            best_loss = record.loss;
            since_best = 0;
            if cfg.keep_best {
                best = Some((record.loss, model.clone()));
            }
        } else {
            since_best += 1;
        }
        let patience_hit = cfg.early_stop_patience.is_some_and(|p| since_best >= p);
        let target_hit = cfg.target_train_accuracy.is_some_and(|a| record.train_accuracy >= a);
        if patience_hit || target_hit {
            outcome.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn error(&self) -> f64 {
        1.0 - self.accuracy()
    }
}

/// Samples per inference batch.
const EVAL_BATCH: usize = 64;

pub fn evaluate<T: Real>(model: &AdaFsNet<T>, data: &TimeSeriesDataset) -> Result<Evaluation> {
    check_compat(model, data)?;
    let c = model.cfg.num_classes;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let x = tape.constant(input(data, chunk)?);
        let fwd = model.forward(&mut tape, x, Mode::Eval)?;
        let logits = tape.value(fwd.logits).data();
        predictions.extend(logits.chunks(c).map(argmax));
    }
    let correct = predictions
        .iter()
        .zip(&data.samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(Evaluation {
        correct,
        total: data.len(),
        predictions,
    })
}

/// Everything needed to go from a train/test pair to a score.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub planner: PlannerConfig,
    /// `num_classes` and `input_dims` are taken from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", stable_hash(format!("{self:?}").as_bytes()))
    }
}

/// FNV-1a; stable across builds and platforms.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Hash of the class names and every value, independent of model settings.
pub fn dataset_fingerprint(data: &TimeSeriesDataset) -> String {
    let mut bytes = Vec::new();
    for name in &data.class_names {
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(0);
    }
    for s in &data.samples {
        bytes.extend_from_slice(&(s.label as u64).to_le_bytes());
        for dim in &s.values {
            for v in dim {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    format!("{:016x}", stable_hash(&bytes))
}

#[derive(Clone, Debug)]
pub struct ExperimentResult<T: Real> {
    pub model: AdaFsNet<T>,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
    /// Wall-clock seconds.
    pub seconds: f64,
}

/// Plans, builds, trains and evaluates one model.
pub fn run_experiment<T: Real>(
    train_set: &TimeSeriesDataset,
    test_set: &TimeSeriesDataset,
    cfg: &ExperimentConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<ExperimentResult<T>> {
    let start = Instant::now();
    let plan = select_pk(train_set.width, &cfg.planner)?;
    let model_cfg = ModelConfig {
        num_classes: train_set.num_classes(),
        input_dims: train_set.dims,
        ..cfg.model.clone()
    };
    let mut model = AdaFsNet::build(&plan, &model_cfg, cfg.train.seed)?;
    let outcome = train_with(&mut model, train_set, &cfg.train, on_epoch)?;
    let evaluation = evaluate(&model, test_set)?;
    Ok(ExperimentResult {
        model,
        outcome,
        evaluation,
        seconds: start.elapsed().as_secs_f64(),
    })
}
