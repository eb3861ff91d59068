//! Binary cross-entropy variants for multi-label heads, cross-entropy for
//! the seven-class head, and per-class positive weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{BatchLabels, ClassStats};
use crate::error::{config_err, Result};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    WeightedBce,
    Focal,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "weighted_bce" => Ok(LossKind::WeightedBce),
            "focal" => Ok(LossKind::Focal),
            other => Err(format!(
                "unknown loss `{other}` (expected bce, weighted_bce or focal)"
            )),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::WeightedBce => "weighted_bce",
            LossKind::Focal => "focal",
        })
    }
}

/// How per-element losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Sum over classes, mean over the batch.
    #[default]
    BatchMean,
    /// Sum over both.
    Sum,
}

impl FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "batch-mean" => Ok(Reduction::BatchMean),
            "sum" => Ok(Reduction::Sum),
            other => Err(format!(
                "unknown reduction `{other}` (expected batch-mean or sum)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: Option<f64>,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: None,
        }
    }
}

/// Per-class weights on the positive BCE term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosWeights(pub Vec<f64>);

impl PosWeights {
    pub fn ones(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }
}

/// `w_c = negatives_c / positives_c`. A class without positives gets the
/// split size as its weight, and a warning is logged.
pub fn pos_weights(stats: &ClassStats) -> PosWeights {
    let cap = stats.total() as f64;
    PosWeights(
        stats
            .positives
            .iter()
            .zip(&stats.negatives)
            .enumerate()
            .map(|(c, (&p, &n))| {
                if p == 0 {
                    log::warn!("class {c} has no positive examples; weight capped at {cap}");
                    cap
                } else {
                    n as f64 / p as f64
                }
            })
            .collect(),
    )
}

fn check_targets(tape: &Tape, logits: Var, targets: &[f64]) -> Result<(usize, usize)> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape[0] * shape[1] != targets.len() {
        return Err(TensorError::Shape {
            op: "bce",
            lhs: shape.to_vec(),
            rhs: vec![targets.len()],
        }
        .into());
    }
    if let Some((i, t)) = targets
        .iter()
        .enumerate()
        .find(|(_, t)| **t != 0.0 && **t != 1.0)
    {
        return Err(TensorError::Contract(format!("target {t} at index {i} is not binary")).into());
    }
    Ok((shape[0], shape[1]))
}

fn reduce(tape: &mut Tape, elementwise_sum: Var, batch: usize, reduction: Reduction) -> Var {
    match reduction {
        Reduction::BatchMean => tape.scale(elementwise_sum, 1.0 / batch as f64),
        Reduction::Sum => elementwise_sum,
    }
}

/// `−Σ [w_c·y·log σ(x) + (1−y)·log(1−σ(x))]` with log-sigmoid evaluated
/// stably. `targets` and `logits` are row-major `[B×C]`.
pub fn weighted_bce(
    tape: &mut Tape,
    logits: Var,
    targets: &[f64],
    weights: &PosWeights,
    reduction: Reduction,
) -> Result<Var> {
    let (b, c) = check_targets(tape, logits, targets)?;
    if weights.0.len() != c {
        return config_err(format!(
            "{} positive weights for {c} classes",
            weights.0.len()
        ));
    }
    let pos_coef: Vec<f64> = targets
        .iter()
        .enumerate()
        .map(|(i, y)| weights.0[i % c] * y)
        .collect();
    let neg_coef: Vec<f64> = targets.iter().map(|y| 1.0 - y).collect();
    let pos_coef = tape.constant(vec![b, c], pos_coef)?;
    let neg_coef = tape.constant(vec![b, c], neg_coef)?;
    let log_p = tape.log_sigmoid(logits)?;
    let neg_logits = tape.neg(logits)?;
    let log_q = tape.log_sigmoid(neg_logits)?;
    let pos = tape.mul(pos_coef, log_p)?;
    let neg = tape.mul(neg_coef, log_q)?;
    let ll = tape.add(pos, neg)?;
    let total = tape.sum(ll);
    let total = tape.neg(total)?;
    Ok(reduce(tape, total, b, reduction))
}

pub fn bce(tape: &mut Tape, logits: Var, targets: &[f64], reduction: Reduction) -> Result<Var> {
    let classes = tape.shape(logits).get(1).copied().unwrap_or(0);
    weighted_bce(tape, logits, targets, &PosWeights::ones(classes), reduction)
}

/// Multi-label focal loss `−α_t (1−p_t)^γ log p_t`.
pub fn focal_multilabel(
    tape: &mut Tape,
    logits: Var,
    targets: &[f64],
    params: FocalParams,
    reduction: Reduction,
) -> Result<Var> {
    let (b, c) = check_targets(tape, logits, targets)?;
    if !(params.gamma >= 0.0) {
        return config_err(format!("focal gamma {} must be non-negative", params.gamma));
    }
    if let Some(a) = params.alpha {
        if !(a > 0.0 && a <= 1.0) {
            return config_err(format!("focal alpha {a} outside (0, 1]"));
        }
    }
    // z = x for positives, −x for negatives, so p_t = σ(z).
    let sign: Vec<f64> = targets.iter().map(|y| 2.0 * y - 1.0).collect();
    let alpha_t: Vec<f64> = targets
        .iter()
        .map(|&y| match params.alpha {
            Some(a) if y == 1.0 => a,
            Some(a) => 1.0 - a,
            None => 1.0,
        })
        .collect();
    let sign = tape.constant(vec![b, c], sign)?;
    let alpha_t = tape.constant(vec![b, c], alpha_t)?;
    let z = tape.mul(logits, sign)?;
    let log_pt = tape.log_sigmoid(z)?;
    let neg_z = tape.neg(z)?;
    let log_one_minus_pt = tape.log_sigmoid(neg_z)?;
    let scaled = tape.scale(log_one_minus_pt, params.gamma);
    let modulator = tape.exp(scaled)?;
    let weighted = tape.mul(modulator, log_pt)?;
    let weighted = tape.mul(alpha_t, weighted)?;
    let total = tape.sum(weighted);
    let total = tape.neg(total)?;
    Ok(reduce(tape, total, b, reduction))
}

/// `−log softmax(x)[target]`, averaged (or summed) over the batch.
pub fn cross_entropy(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    reduction: Reduction,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(TensorError::Shape {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![targets.len()],
        }
        .into());
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.pick(logp, targets)?;
    let total = tape.sum(picked);
    let total = tape.neg(total)?;
    Ok(reduce(tape, total, shape[0], reduction))
}

/// Loss settings for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub reduction: Reduction,
    pub focal: FocalParams,
    /// Used by `WeightedBce`; computed from the training split.
    pub pos_weights: Option<PosWeights>,
}

/// Dispatches on the label layout: class ids use cross-entropy, multi-hot
/// targets use the configured BCE variant.
pub fn task_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &BatchLabels,
    cfg: &LossConfig,
) -> Result<Var> {
    match labels {
        BatchLabels::Class(ids) => cross_entropy(tape, logits, ids, cfg.reduction),
        BatchLabels::MultiHot { classes, values } => match cfg.kind {
            LossKind::Bce => bce(tape, logits, values, cfg.reduction),
            LossKind::WeightedBce => {
                let w = cfg
                    .pos_weights
                    .clone()
                    .unwrap_or_else(|| PosWeights::ones(*classes));
                weighted_bce(tape, logits, values, &w, cfg.reduction)
            }
            LossKind::Focal => focal_multilabel(tape, logits, values, cfg.focal, cfg.reduction),
        },
    }
}
