use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Encoder and adapter hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ff_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub num_segments: usize,
    /// Hidden size divided by the adapter bottleneck width.
    pub reduction_factor: usize,
    /// Layer-norm epsilon.
    pub eps: f64,
    /// Standard deviation of normal weight and embedding initialization.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// Two layers, H = 64, four heads; small enough for exhaustive
    /// gradient checks. Weights start at std 0.1 so a frozen random
    /// encoder still routes token information to [CLS] at this width.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_size: 64,
            num_heads: 4,
            ff_size: 256,
            vocab_size,
            max_positions: 32,
            num_segments: 2,
            reduction_factor: 16,
            eps: 1e-12,
            init_std: 0.1,
        }
    }

    /// Base-size cased encoder dimensions (12 × 768, 28 996 tokens).
    pub fn full_scale() -> Self {
        Self {
            num_layers: 12,
            hidden_size: 768,
            num_heads: 12,
            ff_size: 3072,
            vocab_size: 28_996,
            max_positions: 512,
            num_segments: 2,
            reduction_factor: 16,
            eps: 1e-12,
            init_std: default_init_std(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn bottleneck(&self) -> usize {
        self.hidden_size / self.reduction_factor
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("ff_size", self.ff_size),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("num_segments", self.num_segments),
            ("reduction_factor", self.reduction_factor),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return config_err(format!("{name} must be positive"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return config_err(format!("init_std must be positive, got {}", self.init_std));
        }
        if self.hidden_size % self.num_heads != 0 {
            return config_err(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.hidden_size % self.reduction_factor != 0 {
            return config_err(format!(
                "reduction_factor {} does not divide hidden_size {}",
                self.reduction_factor, self.hidden_size
            ));
        }
        if !(self.eps > 0.0) {
            return config_err("eps must be positive");
        }
        Ok(())
    }
}
