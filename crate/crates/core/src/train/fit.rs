use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricReport};
use super::TrainError;
use crate::dataset::{Dataset, Split};
use crate::model::{loss_and_grad, AdamW, AdamWConfig, Batch, Example, ModelError, SeqTabModel, Task, TaskWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub optimizer: AdamWConfig,
    pub task_weights: TaskWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            eval_batch_size: 64,
            optimizer: AdamWConfig::default(),
            task_weights: TaskWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(TrainError::Config("batch sizes must be positive".into()));
        }
        self.optimizer.validate()?;
        self.task_weights.validate()?;
        Ok(())
    }
}

/// Loss aggregated over many batches: per-task means weighted by target
/// count, combined with the task weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub per_task: [f64; 5],
}

#[derive(Default)]
struct LossSum {
    sums: [f64; 5],
    counts: [usize; 5],
}

impl LossSum {
    fn add(&mut self, values: &[f64; 5], counts: &[usize; 5]) {
        for i in 0..5 {
            self.sums[i] += values[i] * counts[i] as f64;
            self.counts[i] += counts[i];
        }
    }

    fn finish(&self, w: &TaskWeights) -> EpochLoss {
        let per_task: [f64; 5] =
            std::array::from_fn(|i| if self.counts[i] > 0 { self.sums[i] / self.counts[i] as f64 } else { 0.0 });
        let total = Task::ALL.iter().map(|t| w.get(*t) * per_task[t.index()]).sum();
        EpochLoss { total, per_task }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: EpochLoss,
    pub val_loss: EpochLoss,
    /// Lowest validation loss up to and including this epoch.
    pub best_val_loss: f64,
    pub val: MetricReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, by validation next-MCC accuracy.
    pub selected_epoch: Option<usize>,
}

/// Loss of `model` over `examples` without gradients.
pub fn dataset_loss(
    model: &SeqTabModel<f32>,
    examples: &[Example],
    weights: &TaskWeights,
    batch_size: usize,
) -> Result<EpochLoss, TrainError> {
    let mut sum = LossSum::default();
    for chunk in examples.chunks(batch_size.max(1)) {
        match loss_and_grad(model, &Batch::new(chunk), weights, None, false) {
            Ok((r, _)) => sum.add(&r.values, &r.counts),
            Err(ModelError::EmptyBatch) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(sum.finish(weights))
}

/// A trained model. Held-out test metrics are only reachable from here,
/// after training has finished.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: SeqTabModel<f32>,
    pub history: History,
}

impl Trained {
    pub fn evaluate(&self, examples: &[Example], batch_size: usize) -> Result<MetricReport, TrainError> {
        evaluate(&self.model, examples, batch_size)
    }
}

fn non_finite(loss: &EpochLoss) -> Option<Task> {
    Task::ALL.into_iter().find(|t| !loss.per_task[t.index()].is_finite())
}

/// Trains on the train window and selects the epoch with the best
/// validation next-MCC accuracy (the earlier epoch on ties). Only the
/// train and validation windows of `data` are read.
pub fn train(model: SeqTabModel<f32>, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Trained, TrainError> {
    cfg.validate()?;
    let max_len = model.config.max_seq_len;
    let train_ex = data.examples_with_stride(Split::Train, max_len, max_len);
    let val_ex = data.examples(Split::Val, max_len);
    fit(model, &train_ex, &val_ex, cfg, seed)
}

/// Training loop over prepared examples.
pub fn fit(
    mut model: SeqTabModel<f32>,
    train_ex: &[Example],
    val_ex: &[Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(Trained { model, history });
    }
    if train_ex.is_empty() {
        return Err(TrainError::Config("training window has no examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7452_4149_4e00_0000);
    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best: Option<(f64, SeqTabModel<f32>)> = None;
    let mut best_loss = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossSum::default();
        for idx in order.chunks(cfg.batch_size) {
            let chunk: Vec<Example> = idx.iter().map(|&i| train_ex[i].clone()).collect();
            let batch = Batch::new(&chunk);
            match opt.step(&mut model, &batch, &cfg.task_weights, Some(&mut rng)) {
                Ok(r) => sum.add(&r.values, &r.counts),
                Err(ModelError::EmptyBatch) => {}
                Err(source) => return Err(TrainError::Diverged { epoch, source: Box::new(source), history }),
            }
        }
        let train_loss = sum.finish(&cfg.task_weights);
        let val_loss = dataset_loss(&model, val_ex, &cfg.task_weights, cfg.eval_batch_size)?;
        if let Some(task) = non_finite(&train_loss).or_else(|| non_finite(&val_loss)) {
            let source = ModelError::Divergence { task: task.name().into(), what: "loss".into() };
            return Err(TrainError::Diverged { epoch, source: Box::new(source), history });
        }
        best_loss = best_loss.min(val_loss.total);
        let val = evaluate(&model, val_ex, cfg.eval_batch_size)?;
        tracing::info!(epoch, train_loss = train_loss.total, val_loss = val_loss.total, val_mcc_acc = val.next_mcc.acc, "epoch");
        if best.as_ref().is_none_or(|(acc, _)| val.next_mcc.acc > *acc) {
            best = Some((val.next_mcc.acc, model.clone()));
            history.selected_epoch = Some(epoch);
        }
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss, best_val_loss: best_loss, val });
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok(Trained { model, history })
}
