use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{EarlyStopMetric, TrainConfig};
use crate::data::{
    class_statistics, load_corpus, split_path, Batch, ClassStats, Dataset, Label, RawExample,
    Schema, Vocabulary,
};
use crate::error::{config_err, Error, Result};
use crate::loss::{pos_weights, task_loss, LossConfig};
use crate::metrics::{multiclass_report, multilabel_report, MetricsReport};
use crate::model::{group_rng, ForwardOutput, Model};
use crate::optim::{lr_schedule, AdamW};
use crate::task::{TaskKind, TaskSpec};
use crate::tensor::Tape;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Raw train / validation / test corpora for one task.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<RawExample>,
    pub valid: Vec<RawExample>,
    pub test: Vec<RawExample>,
}

impl Splits {
    /// Loads `<dir>/{train,valid,test}.jsonl`.
    pub fn load(dir: &Path, schema: Schema) -> Result<Self> {
        let load = |s| load_corpus(&split_path(dir, s), schema);
        Ok(Self {
            train: load("train")?,
            valid: load("valid")?,
            test: load("test")?,
        })
    }
}

pub fn schema_for(kind: TaskKind) -> Schema {
    match kind {
        TaskKind::BinaryExt => Schema::Binary,
        _ => Schema::Mosei,
    }
}

/// Tokenized splits plus the training-split class statistics.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub train_stats: ClassStats,
}

impl TaskData {
    pub fn prepare(
        splits: &Splits,
        kind: TaskKind,
        vocab: Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        for (name, split) in SPLITS
            .iter()
            .zip([&splits.train, &splits.valid, &splits.test])
        {
            if split.is_empty() {
                return config_err(format!("{name} split is empty"));
            }
        }
        Ok(Self {
            train: Dataset::encode(&splits.train, kind, &vocab, max_len)?,
            valid: Dataset::encode(&splits.valid, kind, &vocab, max_len)?,
            test: Dataset::encode(&splits.test, kind, &vocab, max_len)?,
            train_stats: class_statistics(&splits.train, kind)?,
            vocab,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub loss_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
}

fn selection(report: &MetricsReport, metric: EarlyStopMetric) -> f64 {
    match metric {
        EarlyStopMetric::WeightedF1 => report.weighted_f1,
        EarlyStopMetric::Accuracy => report.mean_accuracy,
    }
}

/// Runs the forward pass over `data` in order and returns the logits,
/// row-major `[N × num_labels]`. `inspect` sees every batch's tape.
pub fn predict(
    model: &Model,
    data: &Dataset,
    task: &str,
    batch_size: usize,
    mut inspect: impl FnMut(&Tape, &ForwardOutput) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return config_err("cannot evaluate an empty split");
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut logits = Vec::new();
    for batch in data.batches(&order, batch_size) {
        let batch = batch?.trim_padding();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, task)?;
        inspect(&tape, &out)?;
        logits.extend_from_slice(tape.value(out.logits));
    }
    Ok(logits)
}

pub fn report_from_logits(
    kind: TaskKind,
    data: &Dataset,
    logits: &[f64],
    threshold: f64,
    split: &str,
    seed: u64,
) -> Result<MetricsReport> {
    match kind {
        TaskKind::Sent7 => {
            let labels: Vec<usize> = data
                .examples
                .iter()
                .map(|e| match e.label {
                    Label::Class(c) => c,
                    Label::MultiHot(_) => unreachable!("seven-class data carries class ids"),
                })
                .collect();
            multiclass_report(logits, &labels, split, seed)
        }
        _ => {
            let labels: Vec<u8> = data
                .examples
                .iter()
                .flat_map(|e| match &e.label {
                    Label::MultiHot(v) => v.clone(),
                    Label::Class(_) => unreachable!("binary data carries multi-hot labels"),
                })
                .collect();
            multilabel_report(kind, logits, &labels, threshold, split, seed)
        }
    }
}

pub fn evaluate(
    model: &Model,
    data: &Dataset,
    task: &TaskSpec,
    cfg: &TrainConfig,
    split: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let logits = predict(model, data, &task.name, cfg.batch_size, |_, _| Ok(()))?;
    report_from_logits(task.kind, data, &logits, cfg.threshold, split, seed)
}

pub fn loss_config_for(cfg: &TrainConfig, data: &TaskData) -> LossConfig {
    cfg.loss_config(Some(pos_weights(&data.train_stats)))
}

fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    batch: &Batch,
    task: &str,
    loss: &LossConfig,
) -> Result<crate::tensor::Var> {
    let out = model.forward(tape, batch, task)?;
    task_loss(tape, out.logits, &batch.labels, loss)
}

/// Trains whatever the model's current stage leaves trainable, with early
/// stopping on the validation metric. The best epoch's parameters are
/// restored and rounded to checkpoint precision before returning.
pub fn fit(
    model: &mut Model,
    task: &TaskSpec,
    data: &TaskData,
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let loss_cfg = loss_config_for(cfg, data);
    let metric = cfg.early_stop_metric(task.kind);
    let mut rng = group_rng(run_seed, "shuffle");
    let mut opt = AdamW::new(cfg.adamw());
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let trainable: Vec<usize> = model
        .params()
        .iter()
        .filter(|(_, _, t)| t.requires_grad())
        .map(|(id, _, _)| id)
        .collect();
    let snapshot = |m: &Model| -> Vec<Vec<f64>> {
        trainable
            .iter()
            .map(|&id| m.params().get(id).data().to_vec())
            .collect()
    };

    let mut history = TrainHistory {
        epochs: Vec::new(),
        loss_curve: Vec::with_capacity(total_steps),
        best_epoch: 0,
        best_metric: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best = snapshot(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in data.train.batches(&order, cfg.batch_size) {
            let batch = batch?.trim_padding();
            let mut tape = Tape::new();
            let loss = batch_loss(model, &mut tape, &batch, &task.name, &loss_cfg)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: value,
                });
            }
            tape.backward(loss)?;
            model.params_mut().zero_grads();
            model.collect_grads(&tape)?;
            opt.step(
                model.params_mut(),
                lr_schedule(step, total_steps, cfg.lr, cfg.warmup_steps),
            )?;
            history.loss_curve.push(value);
            epoch_loss += value;
            step += 1;
        }
        let report = evaluate(model, &data.valid, task, cfg, "valid", run_seed)?;
        let value = selection(&report, metric);
        let improved = value > history.best_metric;
        if improved {
            history.best_metric = value;
            history.best_epoch = epoch;
            best = snapshot(model);
        }
        log::info!(
            "{} epoch {epoch}: loss {:.5}, valid {metric:?} {value:.4}",
            task.name,
            epoch_loss / steps_per_epoch as f64
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / steps_per_epoch as f64,
            valid_metric: value,
            improved,
        });
        if epoch - history.best_epoch >= cfg.patience && epoch < cfg.epochs {
            history.stopped_early = true;
            break;
        }
    }
    model.params_mut().zero_grads();
    for (&id, values) in trainable.iter().zip(best) {
        let t = model.params_mut().get_mut(id);
        for (dst, v) in t.data_mut().iter_mut().zip(values) {
            *dst = v as f32 as f64;
        }
    }
    Ok(history)
}
