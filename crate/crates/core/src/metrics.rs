//! Per-class binary accuracy / precision / recall / F1, the unweighted mean
//! accuracy, support-weighted F1, and multiclass accuracy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::task::TaskKind;
use crate::tensor::{sigmoid, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(TensorError::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        ))
        .into());
    }
    let mut c = Confusion::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn binary_accuracy(c: &Confusion) -> Result<f64> {
    if c.total() == 0 {
        return Err(TensorError::Contract("accuracy over zero examples".into()).into());
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// `2tp / (2tp + fp + fn)`, zero when the denominator is zero.
pub fn f1(c: &Confusion) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Positive examples of this class in the evaluated split.
    pub support: usize,
    pub confusion: Confusion,
}

impl ClassMetrics {
    fn from_confusion(name: &str, c: Confusion) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            accuracy: binary_accuracy(&c)?,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: f1(&c),
            support: c.tp + c.fn_,
            confusion: c,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub split: String,
    pub seed: u64,
    pub examples: usize,
    pub classes: Vec<ClassMetrics>,
    /// Unweighted mean of per-class accuracies; exact-match accuracy for
    /// the seven-class task.
    pub mean_accuracy: f64,
    /// Per-class F1 weighted by positive support. Zero for seven-class.
    pub weighted_f1: f64,
}

impl MetricsReport {
    /// The value early stopping maximizes.
    pub fn selection_metric(&self) -> f64 {
        match self.task {
            TaskKind::Emotion => self.weighted_f1,
            _ => self.mean_accuracy,
        }
    }

    /// Aligned plain-text table, one `A/F1` cell per class plus overall,
    /// values in percent.
    pub fn to_table(&self) -> String {
        let mut header = String::from("      ");
        let mut row = String::from("A/F1  ");
        for c in &self.classes {
            let _ = write!(header, "{:>12}", capitalize(&c.name));
            let _ = write!(
                row,
                "{:>12}",
                format!("{:.1}/{:.1}", 100.0 * c.accuracy, 100.0 * c.f1)
            );
        }
        let _ = write!(header, "{:>12}", "Overall");
        let overall = if self.task == TaskKind::Sent7 {
            format!("{:.1}/-", 100.0 * self.mean_accuracy)
        } else {
            format!(
                "{:.1}/{:.1}",
                100.0 * self.mean_accuracy,
                100.0 * self.weighted_f1
            )
        };
        let _ = write!(row, "{overall:>12}");
        format!("{header}\n{row}\n")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Support-weighted mean of per-class F1; zero when no class has positives.
pub fn weighted_f1(classes: &[ClassMetrics]) -> f64 {
    let support: usize = classes.iter().map(|c| c.support).sum();
    if support == 0 {
        return 0.0;
    }
    classes.iter().map(|c| c.support as f64 * c.f1).sum::<f64>() / support as f64
}

/// Multi-label report: class `c` is predicted when `σ(logit) > threshold`.
/// `logits` and `labels` are row-major `[N × C]`.
pub fn multilabel_report(
    task: TaskKind,
    logits: &[f64],
    labels: &[u8],
    threshold: f64,
    split: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let names = task.class_names();
    let c = names.len();
    if logits.len() != labels.len() || c == 0 || logits.len() % c != 0 {
        return Err(TensorError::Contract(format!(
            "{} logits and {} labels for {c} classes",
            logits.len(),
            labels.len()
        ))
        .into());
    }
    let n = logits.len() / c;
    let mut classes = Vec::with_capacity(c);
    for (k, name) in names.iter().enumerate() {
        let preds: Vec<u8> = (0..n)
            .map(|i| u8::from(sigmoid(logits[i * c + k]) > threshold))
            .collect();
        let ys: Vec<u8> = (0..n).map(|i| labels[i * c + k]).collect();
        classes.push(ClassMetrics::from_confusion(name, confusion(&preds, &ys)?)?);
    }
    let mean_accuracy = classes.iter().map(|m| m.accuracy).sum::<f64>() / c as f64;
    Ok(MetricsReport {
        task,
        split: split.to_string(),
        seed,
        examples: n,
        mean_accuracy,
        weighted_f1: weighted_f1(&classes),
        classes,
    })
}

pub fn emotion_report(logits: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    multilabel_report(TaskKind::Emotion, logits, labels, threshold, "eval", 0)
}

pub fn multiclass_accuracy(preds: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(TensorError::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        ))
        .into());
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&i| i >= k) {
        return Err(TensorError::Contract(format!("class id {bad} outside 0..{k}")).into());
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Seven-class report: argmax predictions, exact-match accuracy overall,
/// and one-vs-rest binary metrics per class.
pub fn multiclass_report(
    logits: &[f64],
    labels: &[usize],
    split: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let names = TaskKind::Sent7.class_names();
    let k = names.len();
    if logits.len() != labels.len() * k {
        return Err(TensorError::Contract(format!(
            "{} logits for {} examples of {k} classes",
            logits.len(),
            labels.len()
        ))
        .into());
    }
    let preds: Vec<usize> = logits
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let accuracy = multiclass_accuracy(&preds, labels, k)?;
    let mut classes = Vec::with_capacity(k);
    for (c, name) in names.iter().enumerate() {
        let p: Vec<u8> = preds.iter().map(|&x| u8::from(x == c)).collect();
        let y: Vec<u8> = labels.iter().map(|&x| u8::from(x == c)).collect();
        classes.push(ClassMetrics::from_confusion(name, confusion(&p, &y)?)?);
    }
    Ok(MetricsReport {
        task: TaskKind::Sent7,
        split: split.to_string(),
        seed,
        examples: labels.len(),
        classes,
        mean_accuracy: accuracy,
        weighted_f1: 0.0,
    })
}

/// Field-wise mean of several reports of the same task; class confusion
/// counts and supports are summed.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let Some(first) = reports.first() else {
        return Err(TensorError::Contract("mean of zero reports".into()).into());
    };
    if reports
        .iter()
        .any(|r| r.task != first.task || r.classes.len() != first.classes.len())
    {
        return Err(TensorError::Contract("reports disagree on task or classes".into()).into());
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let classes = (0..first.classes.len())
        .map(|c| {
            let cm = |f: &dyn Fn(&ClassMetrics) -> f64| {
                reports.iter().map(|r| f(&r.classes[c])).sum::<f64>() / n
            };
            let mut confusion = Confusion::default();
            for r in reports {
                let k = r.classes[c].confusion;
                confusion.tp += k.tp;
                confusion.fp += k.fp;
                confusion.tn += k.tn;
                confusion.fn_ += k.fn_;
            }
            ClassMetrics {
                name: first.classes[c].name.clone(),
                accuracy: cm(&|m| m.accuracy),
                precision: cm(&|m| m.precision),
                recall: cm(&|m| m.recall),
                f1: cm(&|m| m.f1),
                support: reports.iter().map(|r| r.classes[c].support).sum(),
                confusion,
            }
        })
        .collect();
    Ok(MetricsReport {
        task: first.task,
        split: first.split.clone(),
        seed: first.seed,
        examples: first.examples,
        classes,
        mean_accuracy: mean(&|r| r.mean_accuracy),
        weighted_f1: mean(&|r| r.weighted_f1),
    })
}
