use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::loss::{FocalParams, LossConfig, LossKind, PosWeights, Reduction};
use crate::model::ModelConfig;
use crate::optim::AdamWConfig;
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    WeightedF1,
    Accuracy,
}

impl EarlyStopMetric {
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Emotion => EarlyStopMetric::WeightedF1,
            _ => EarlyStopMetric::Accuracy,
        }
    }
}

/// Encoder and adapter dimensions; vocabulary size and position count are
/// filled in from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ff_size: usize,
    pub reduction_factor: usize,
    pub init_std: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = ModelConfig::desk(1);
        Self {
            num_layers: d.num_layers,
            hidden_size: d.hidden_size,
            num_heads: d.num_heads,
            ff_size: d.ff_size,
            reduction_factor: d.reduction_factor,
            init_std: d.init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub runs: usize,
    pub loss: LossKind,
    pub loss_reduction: Reduction,
    pub focal_gamma: f64,
    pub focal_alpha: Option<f64>,
    /// Defaults to weighted F1 for emotion, accuracy otherwise.
    pub metric_for_early_stop: Option<EarlyStopMetric>,
    pub warmup_steps: usize,
    pub threshold: f64,
    /// Token budget per example, including [CLS] and [SEP].
    pub max_len: usize,
    /// Vocabulary cap (specials included) when building from the corpus.
    pub max_vocab: usize,
    /// Seed of the shared frozen encoder when none is supplied.
    pub encoder_seed: u64,
    pub model: ModelShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            lr: 1e-5,
            weight_decay: adam.weight_decay,
            betas: (adam.beta1, adam.beta2),
            adam_eps: adam.eps,
            epochs: 10,
            patience: 3,
            batch_size: 32,
            seed: 0,
            runs: 3,
            loss: LossKind::WeightedBce,
            loss_reduction: Reduction::BatchMean,
            focal_gamma: 2.0,
            focal_alpha: None,
            metric_for_early_stop: None,
            warmup_steps: 0,
            threshold: 0.5,
            max_len: 32,
            max_vocab: 30_000,
            encoder_seed: 0,
            model: ModelShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.patience == 0 {
            return config_err("epochs and patience must be positive");
        }
        if self.patience > self.epochs {
            return config_err(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            ));
        }
        if self.batch_size == 0 || self.runs == 0 {
            return config_err("batch_size and runs must be positive");
        }
        if self.max_len < 2 {
            return config_err("max_len must leave room for [CLS] and [SEP]");
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return config_err(format!("threshold {} outside [0, 1)", self.threshold));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2))
            || self.adam_eps <= 0.0
            || self.weight_decay < 0.0
        {
            return config_err("invalid AdamW hyperparameters");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.model.num_layers,
            hidden_size: self.model.hidden_size,
            num_heads: self.model.num_heads,
            ff_size: self.model.ff_size,
            vocab_size,
            max_positions: self.max_len,
            reduction_factor: self.model.reduction_factor,
            init_std: self.model.init_std,
            ..ModelConfig::desk(vocab_size)
        }
    }

    pub fn early_stop_metric(&self, kind: TaskKind) -> EarlyStopMetric {
        self.metric_for_early_stop
            .unwrap_or_else(|| EarlyStopMetric::default_for(kind))
    }

    /// Loss settings; `pos_weights` is only kept for the weighted variant.
    pub fn loss_config(&self, pos_weights: Option<PosWeights>) -> LossConfig {
        LossConfig {
            kind: self.loss,
            reduction: self.loss_reduction,
            focal: FocalParams {
                gamma: self.focal_gamma,
                alpha: self.focal_alpha,
            },
            pos_weights: if self.loss == LossKind::WeightedBce {
                pos_weights
            } else {
                None
            },
        }
    }
}
