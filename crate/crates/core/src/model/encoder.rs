//! Post-LN transformer encoder with an adapter slot after each layer's
//! feed-forward block.

use super::adapter::{apply_slot, Slot};
use super::config::ModelConfig;
use super::params::ParamStore;
use crate::data::Batch;
use crate::error::{config_err, Result};
use crate::tensor::{Tape, Var};

/// Additive score for masked key positions.
pub const MASKED_SCORE: f64 = -1e9;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Linear {
    pub(crate) fn resolve(store: &ParamStore, prefix: &str, bias: bool) -> Result<Self> {
        Ok(Self {
            weight: store.id(&format!("{prefix}.weight"))?,
            bias: if bias {
                Some(store.id(&format!("{prefix}.bias"))?)
            } else {
                None
            },
        })
    }

    /// `x [n×in] · W [in×out] (+ b)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(self.weight, store.get(self.weight));
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.bias {
            let b = tape.param(b, store.get(b));
            y = tape.add_bias(y, b)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

impl Norm {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: store.id(&format!("{prefix}.norm.gamma"))?,
            beta: store.id(&format!("{prefix}.norm.beta"))?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, eps: f64) -> Result<Var> {
        let g = tape.param(self.gamma, store.get(self.gamma));
        let b = tape.param(self.beta, store.get(self.beta));
        Ok(tape.layer_norm(x, g, b, eps)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attention_norm: Norm,
    pub ffn_inner: Linear,
    pub ffn_outer: Linear,
    pub ffn_norm: Norm,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub word: usize,
    pub position: usize,
    pub segment: usize,
    pub embedding_norm: Norm,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn resolve(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.layer.{l}");
                Ok(LayerParams {
                    query: Linear::resolve(store, &format!("{p}.attention.query"), true)?,
                    key: Linear::resolve(store, &format!("{p}.attention.key"), true)?,
                    value: Linear::resolve(store, &format!("{p}.attention.value"), true)?,
                    output: Linear::resolve(store, &format!("{p}.attention.output"), true)?,
                    attention_norm: Norm::resolve(store, &format!("{p}.attention"))?,
                    ffn_inner: Linear::resolve(store, &format!("{p}.ffn.inner"), true)?,
                    ffn_outer: Linear::resolve(store, &format!("{p}.ffn.outer"), true)?,
                    ffn_norm: Norm::resolve(store, &format!("{p}.ffn"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            word: store.id("encoder.embeddings.word")?,
            position: store.id("encoder.embeddings.position")?,
            segment: store.id("encoder.embeddings.segment")?,
            embedding_norm: Norm::resolve(store, "encoder.embeddings")?,
            layers,
        })
    }
}

/// Token + position + segment embeddings followed by layer norm; returns
/// `[B·L × H]`.
pub fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    enc: &EncoderParams,
    batch: &Batch,
) -> Result<Var> {
    if batch.seq_len > cfg.max_positions {
        return config_err(format!(
            "sequence length {} exceeds max_positions {}",
            batch.seq_len, cfg.max_positions
        ));
    }
    if let Some(&bad) = batch.token_ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return config_err(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        ));
    }
    if let Some(&bad) = batch.segment_ids.iter().find(|&&s| s >= cfg.num_segments) {
        return config_err(format!(
            "segment id {bad} outside {} segments",
            cfg.num_segments
        ));
    }
    let positions: Vec<usize> = (0..batch.batch_size)
        .flat_map(|_| 0..batch.seq_len)
        .collect();
    let word = tape.param(enc.word, store.get(enc.word));
    let pos = tape.param(enc.position, store.get(enc.position));
    let seg = tape.param(enc.segment, store.get(enc.segment));
    let w = tape.gather_rows(word, &batch.token_ids)?;
    let p = tape.gather_rows(pos, &positions)?;
    let s = tape.gather_rows(seg, &batch.segment_ids)?;
    let sum = tape.add(w, p)?;
    let sum = tape.add(sum, s)?;
    enc.embedding_norm.forward(tape, store, sum, cfg.eps)
}

/// `[B·nh × L × L]` additive mask: `MASKED_SCORE` where the key is padding.
pub fn attention_bias(batch: &Batch, num_heads: usize) -> Vec<f64> {
    let l = batch.seq_len;
    let mut out = Vec::with_capacity(batch.batch_size * num_heads * l * l);
    for b in 0..batch.batch_size {
        let mask = &batch.attention_mask[b * l..(b + 1) * l];
        let row: Vec<f64> = mask
            .iter()
            .map(|&m| if m == 0 { MASKED_SCORE } else { 0.0 })
            .collect();
        for _ in 0..num_heads * l {
            out.extend_from_slice(&row);
        }
    }
    out
}

fn split_heads(tape: &mut Tape, x: Var, b: usize, l: usize, nh: usize, dh: usize) -> Result<Var> {
    let x = tape.reshape(x, vec![b, l, nh, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    Ok(tape.reshape(x, vec![b * nh, l, dh])?)
}

/// Scaled dot-product attention over `h [B·L × H]`. Returns the projected
/// output and the attention probabilities `[B·nh × L × L]`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    layer: &LayerParams,
    h: Var,
    bias: Var,
    batch_size: usize,
    seq_len: usize,
) -> Result<(Var, Var)> {
    let (nh, dh) = (cfg.num_heads, cfg.head_dim());
    let (b, l) = (batch_size, seq_len);
    let q = layer.query.forward(tape, store, h)?;
    let k = layer.key.forward(tape, store, h)?;
    let v = layer.value.forward(tape, store, h)?;
    let q = split_heads(tape, q, b, l, nh, dh)?;
    let k = split_heads(tape, k, b, l, nh, dh)?;
    let v = split_heads(tape, v, b, l, nh, dh)?;
    let kt = tape.transpose_last2(k)?;
    let scores = tape.batch_matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let scores = tape.add(scores, bias)?;
    let probs = tape.softmax(scores, 2)?;
    let ctx = tape.batch_matmul(probs, v)?;
    let ctx = tape.reshape(ctx, vec![b, nh, l, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, vec![b * l, cfg.hidden_size])?;
    let out = layer.output.forward(tape, store, ctx)?;
    Ok((out, probs))
}

/// Per-layer values kept for inspection.
#[derive(Debug, Clone, Default)]
pub struct LayerTrace {
    pub attention_probs: Option<Var>,
    /// Fusion weights `[B·L × 1 × T]` when the slot is a fusion.
    pub fusion_weights: Option<Var>,
}

/// Attention and feed-forward sublayers (residual + norm each), then the
/// adapter slot on the feed-forward output.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer_forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    layer: &LayerParams,
    layer_idx: usize,
    h: Var,
    bias: Var,
    batch_size: usize,
    seq_len: usize,
    slot: &Slot<'_>,
) -> Result<(Var, LayerTrace)> {
    let (attn, probs) =
        multi_head_attention(tape, store, cfg, layer, h, bias, batch_size, seq_len)?;
    let res = tape.add(h, attn)?;
    let h1 = layer.attention_norm.forward(tape, store, res, cfg.eps)?;
    let inner = layer.ffn_inner.forward(tape, store, h1)?;
    let inner = tape.gelu(inner)?;
    let ff = layer.ffn_outer.forward(tape, store, inner)?;
    let res = tape.add(h1, ff)?;
    let h2 = layer.ffn_norm.forward(tape, store, res, cfg.eps)?;
    let (out, fusion_weights) = apply_slot(tape, store, slot, layer_idx, h2)?;
    Ok((
        out,
        LayerTrace {
            attention_probs: Some(probs),
            fusion_weights,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[B·L × H]` final hidden states.
    pub hidden: Var,
    /// `[B × H]` position-0 states.
    pub cls: Var,
    pub layers: Vec<LayerTrace>,
}

pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    enc: &EncoderParams,
    batch: &Batch,
    slot: &Slot<'_>,
) -> Result<Encoded> {
    let (b, l) = (batch.batch_size, batch.seq_len);
    let mut h = embed(tape, store, cfg, enc, batch)?;
    let bias = tape.constant(
        vec![b * cfg.num_heads, l, l],
        attention_bias(batch, cfg.num_heads),
    )?;
    let mut layers = Vec::with_capacity(enc.layers.len());
    for (i, layer) in enc.layers.iter().enumerate() {
        let (next, trace) = encoder_layer_forward(tape, store, cfg, layer, i, h, bias, b, l, slot)?;
        h = next;
        layers.push(trace);
    }
    let flat = tape.reshape(h, vec![b, l * cfg.hidden_size])?;
    let cls = tape.narrow_cols(flat, 0, cfg.hidden_size)?;
    Ok(Encoded {
        hidden: h,
        cls,
        layers,
    })
}
