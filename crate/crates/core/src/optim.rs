//! AdamW with decoupled weight decay and a linear learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{decays, ParamStore};
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// One in-place AdamW update of a parameter slice. `t` is the 1-based step
/// count. Both the adaptive and the decay term read the pre-update value.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) -> Result<()> {
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(TensorError::Contract(format!(
            "adamw: parameter {} / gradient {} / moments {},{} lengths differ",
            p.len(),
            g.len(),
            m.len(),
            v.len()
        ))
        .into());
    }
    if t == 0 {
        return Err(TensorError::Contract("adamw step count starts at 1".into()).into());
    }
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    let lambda = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let old = p[i];
        p[i] = old - lr * (m_hat / (v_hat.sqrt() + cfg.eps)) - lr * lambda * old;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state keyed by parameter id.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    state: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            state: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter holding a gradient. Frozen
    /// parameters are never touched.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        for id in 0..params.len() {
            let decay = decays(params.name(id));
            let tensor = params.get_mut(id);
            if !tensor.requires_grad() {
                continue;
            }
            let Some(g) = tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let n = tensor.numel();
            let st = self.state[id].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            adamw_update(
                tensor.data_mut(),
                &g,
                &mut st.m,
                &mut st.v,
                self.step,
                lr,
                &self.config,
                decay,
            )?;
        }
        Ok(())
    }
}

/// Linear warmup over `warmup` steps, then linear decay reaching zero at
/// `total`. With `warmup == 0` this is `base·(1 − step/total)`.
pub fn lr_schedule(step: usize, total: usize, base: f64, warmup: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let step = step.min(total);
    if warmup == 0 {
        return base * (1.0 - step as f64 / total as f64);
    }
    let warmup = warmup.min(total);
    if step < warmup {
        base * step as f64 / warmup as f64
    } else if total == warmup {
        base
    } else {
        base * (total - step) as f64 / (total - warmup) as f64
    }
}
