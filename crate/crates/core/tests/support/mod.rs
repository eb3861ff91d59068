#![allow(dead_code)]

use fuseformer::data::{Batch, BatchLabels, CLS, NUM_SPECIALS, PAD, SEP};
use fuseformer::model::{Model, ModelConfig, SlotMode};
use fuseformer::task::{TaskKind, TaskSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TARGET: &str = "target";

/// Two layers, H = 8: small enough to probe every coordinate.
pub fn tiny() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden_size: 8,
        num_heads: 2,
        ff_size: 16,
        vocab_size: 20,
        max_positions: 10,
        num_segments: 2,
        reduction_factor: 2,
        eps: 1e-12,
        init_std: 0.1,
    }
}

/// Row `i` has `lengths[i]` real tokens ([CLS] … [SEP]) then padding.
pub fn batch_with_lengths(
    rng: &mut ChaCha8Rng,
    vocab: usize,
    lengths: &[usize],
    seq_len: usize,
) -> Batch {
    let mut token_ids = Vec::new();
    let mut attention_mask = Vec::new();
    for &real in lengths {
        assert!((2..=seq_len).contains(&real));
        for j in 0..seq_len {
            token_ids.push(match j {
                0 => CLS,
                j if j + 1 == real => SEP,
                j if j < real => rng.random_range(NUM_SPECIALS..vocab),
                _ => PAD,
            });
            attention_mask.push(u8::from(j < real));
        }
    }
    let b = lengths.len();
    Batch {
        batch_size: b,
        seq_len,
        segment_ids: vec![0; b * seq_len],
        token_ids,
        attention_mask,
        labels: BatchLabels::MultiHot {
            classes: 6,
            values: (0..b * 6)
                .map(|_| f64::from(rng.random_bool(0.4)))
                .collect(),
        },
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, vocab: usize, b: usize, seq_len: usize) -> Batch {
    let lengths: Vec<usize> = (0..b)
        .map(|i| {
            if i == 0 {
                seq_len
            } else {
                rng.random_range(2..=seq_len)
            }
        })
        .collect();
    batch_with_lengths(rng, vocab, &lengths, seq_len)
}

/// Randomizes adapter up-projections so adapters contribute visibly.
pub fn widen_adapters(model: &mut Model, rng: &mut ChaCha8Rng) {
    let ids: Vec<usize> = model
        .params()
        .iter()
        .filter(|(_, n, _)| n.contains(".up."))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
}

/// Encoder, adapters for `tasks`, fusion over them and an emotion head
/// named [`TARGET`], attached in fusion mode.
pub fn fusion_model(cfg: &ModelConfig, tasks: &[&str], seed: u64) -> Model {
    let mut m = Model::new(cfg.clone(), seed).unwrap();
    let names: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    for (i, t) in names.iter().enumerate() {
        m.add_adapter(t, seed + 1 + i as u64).unwrap();
    }
    m.add_fusion(&names, seed + 100).unwrap();
    m.add_head(&TaskSpec::new(TARGET, TaskKind::Emotion), seed + 200)
        .unwrap();
    m.attach(SlotMode::Fusion(names)).unwrap();
    m
}

/// Encoder, one adapter and an emotion head, attached in single mode.
pub fn adapter_model(cfg: &ModelConfig, task: &str, seed: u64) -> Model {
    let mut m = Model::new(cfg.clone(), seed).unwrap();
    m.add_adapter(task, seed + 1).unwrap();
    m.add_head(&TaskSpec::new(TARGET, TaskKind::Emotion), seed + 2)
        .unwrap();
    m.attach(SlotMode::Single(task.into())).unwrap();
    m
}
