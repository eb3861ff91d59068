//! Structural invariants of the encoder, adapters, fusion layers and
//! parameter accounting.

mod support;

use fuseformer::data::Batch;
use fuseformer::model::{
    adapter_forward, adapter_layout, count_parameters, fusion_forward, AccountingMode,
    AdapterParams, FusionParams, Model, ModelConfig, SlotMode, Stage,
};
use fuseformer::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

fn logits(model: &Model, batch: &Batch) -> Vec<f64> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, batch, TARGET).unwrap();
    tape.value(out.logits).to_vec()
}

fn cls(model: &Model, batch: &Batch) -> Vec<f64> {
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, batch).unwrap();
    tape.value(enc.cls).to_vec()
}

fn rows(batch: &Batch, order: &[usize]) -> Batch {
    let l = batch.seq_len;
    let pick = |v: &[usize]| {
        order
            .iter()
            .flat_map(|&i| v[i * l..(i + 1) * l].to_vec())
            .collect::<Vec<_>>()
    };
    let mut out = batch.clone();
    out.batch_size = order.len();
    out.token_ids = pick(&batch.token_ids);
    out.segment_ids = pick(&batch.segment_ids);
    out.attention_mask = order
        .iter()
        .flat_map(|&i| batch.attention_mask[i * l..(i + 1) * l].to_vec())
        .collect();
    out
}

fn pad_to(batch: &Batch, seq_len: usize) -> Batch {
    let l = batch.seq_len;
    let mut out = batch.clone();
    out.seq_len = seq_len;
    out.token_ids.clear();
    out.attention_mask.clear();
    for i in 0..batch.batch_size {
        out.token_ids
            .extend_from_slice(&batch.token_ids[i * l..(i + 1) * l]);
        out.token_ids
            .resize((i + 1) * seq_len, fuseformer::data::PAD);
        out.attention_mask
            .extend_from_slice(&batch.attention_mask[i * l..(i + 1) * l]);
        out.attention_mask.resize((i + 1) * seq_len, 0);
    }
    out.segment_ids = vec![0; batch.batch_size * seq_len];
    out
}

fn trained_like(seed: u64) -> (Model, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = fusion_model(&tiny(), &["a", "b", "c"], seed);
    widen_adapters(&mut m, &mut rng);
    (m, rng)
}

#[test]
fn permuting_examples_permutes_outputs() {
    let (m, mut rng) = trained_like(1);
    let batch = random_batch(&mut rng, tiny().vocab_size, 4, 6);
    let order = [2, 0, 3, 1];
    let base = logits(&m, &batch);
    let perm = logits(&m, &rows(&batch, &order));
    for (j, &i) in order.iter().enumerate() {
        for c in 0..6 {
            assert!((perm[j * 6 + c] - base[i * 6 + c]).abs() < 1e-12);
        }
    }
}

#[test]
fn extra_padding_leaves_cls_unchanged() {
    let (m, mut rng) = trained_like(2);
    let batch = random_batch(&mut rng, tiny().vocab_size, 3, 5);
    let a = cls(&m, &batch);
    let b = cls(&m, &pad_to(&batch, 9));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn encode_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = random_batch(&mut rng, tiny().vocab_size, 3, 6);
    let a = Model::new(tiny(), 42).unwrap();
    let b = Model::new(tiny(), 42).unwrap();
    assert_eq!(cls(&a, &batch), cls(&b, &batch));
}

#[test]
fn zero_up_projection_makes_the_adapter_an_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_batch(&mut rng, tiny().vocab_size, 3, 6);
    let mut m = adapter_model(&tiny(), "emo", 4);
    let ids: Vec<usize> = m
        .params()
        .iter()
        .filter(|(_, n, _)| n.contains(".up."))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let with = logits(&m, &batch);
    m.attach(SlotMode::None).unwrap();
    assert_eq!(with, logits(&m, &batch));
}

#[test]
fn adapter_keeps_shape_with_bottleneck_h_over_r() {
    let cfg = ModelConfig {
        num_layers: 1,
        ..tiny()
    };
    let layout = adapter_layout(&cfg, "t");
    let numel: usize = layout.iter().map(|s| s.numel()).sum();
    assert_eq!(numel, 8 * 4 + 4 + 4 * 8 + 8);
    assert_eq!(layout[0].shape, vec![8, 4]);

    let mut m = Model::new(cfg.clone(), 0).unwrap();
    m.add_adapter("t", 1).unwrap();
    let adapter = AdapterParams::resolve(m.params(), &cfg, "t").unwrap();
    let mut tape = Tape::new();
    let h =
        tape.input(&Tensor::new(vec![5, 8], (0..40).map(|i| i as f64 / 40.0).collect()).unwrap());
    let out = adapter_forward(&mut tape, m.params(), &adapter, 0, h).unwrap();
    assert_eq!(tape.shape(out), &[5, 8]);
}

#[test]
fn attention_rows_are_distributions_over_unmasked_keys() {
    let (m, mut rng) = trained_like(5);
    let batch = batch_with_lengths(&mut rng, tiny().vocab_size, &[6, 3, 2], 6);
    let mut tape = Tape::new();
    let enc = m.encode(&mut tape, &batch).unwrap();
    let nh = tiny().num_heads;
    for layer in &enc.layers {
        let probs = tape.value(layer.attention_probs.unwrap());
        for (r, row) in probs.chunks(6).enumerate() {
            let b = r / (nh * 6);
            let mask = &batch.attention_mask[b * 6..(b + 1) * 6];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for (p, &mk) in row.iter().zip(mask) {
                assert!(mk == 1 || *p == 0.0);
            }
        }
    }
    // Row 2 holds two real tokens; an extra mask leaves only [CLS].
    let mut one = batch.clone();
    one.attention_mask[2 * 6 + 1] = 0;
    let mut tape = Tape::new();
    let enc = m.encode(&mut tape, &one).unwrap();
    let probs = tape.value(enc.layers[0].attention_probs.unwrap());
    for row in probs.chunks(6).skip(2 * nh * 6).take(nh * 6) {
        assert!((row[0] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn equal_keys_give_uniform_attention() {
    let (mut m, mut rng) = trained_like(6);
    let ids: Vec<usize> = m
        .params()
        .iter()
        .filter(|(_, n, _)| n.contains("attention.key."))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let batch = batch_with_lengths(&mut rng, tiny().vocab_size, &[5, 4], 5);
    let mut tape = Tape::new();
    let enc = m.encode(&mut tape, &batch).unwrap();
    let probs = tape.value(enc.layers[1].attention_probs.unwrap());
    let nh = tiny().num_heads;
    for (r, row) in probs.chunks(5).enumerate() {
        let real = if r / (nh * 5) == 0 { 5 } else { 4 };
        for p in &row[..real] {
            assert!((p - 1.0 / real as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn fusion_weights_form_a_simplex_everywhere() {
    let (m, mut rng) = trained_like(7);
    let batch = random_batch(&mut rng, tiny().vocab_size, 3, 6);
    let mut tape = Tape::new();
    let enc = m.encode(&mut tape, &batch).unwrap();
    for layer in &enc.layers {
        let w = layer.fusion_weights.unwrap();
        assert_eq!(tape.shape(w), &[3 * 6, 1, 3]);
        for alpha in tape.value(w).chunks(3) {
            assert!(alpha.iter().all(|&a| a >= 0.0));
            assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn single_task_fusion_has_unit_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = fusion_model(&tiny(), &["only"], 8);
    let batch = random_batch(&mut rng, tiny().vocab_size, 2, 5);
    let mut tape = Tape::new();
    let enc = m.encode(&mut tape, &batch).unwrap();
    for layer in &enc.layers {
        assert!(tape
            .value(layer.fusion_weights.unwrap())
            .iter()
            .all(|&a| a == 1.0));
    }
}

#[test]
fn identical_adapter_outputs_reduce_to_value_map() {
    let cfg = tiny();
    let m = fusion_model(&cfg, &["a", "b"], 9);
    let fusion = FusionParams::resolve(m.params(), &cfg, &["a".into(), "b".into()]).unwrap();
    let mut tape = Tape::new();
    let h =
        tape.input(&Tensor::new(vec![3, 8], (0..24).map(|i| (i as f64).sin()).collect()).unwrap());
    let a =
        tape.input(&Tensor::new(vec![3, 8], (0..24).map(|i| (i as f64).cos()).collect()).unwrap());
    let (out, _) = fusion_forward(&mut tape, m.params(), &fusion, 0, h, &[a, a]).unwrap();
    let value = fusion.layers[0]
        .value
        .forward(&mut tape, m.params(), a)
        .unwrap();
    let expect = tape.add(value, h).unwrap();
    for (x, y) in tape.value(out).iter().zip(tape.value(expect)) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(fusion_forward(&mut tape, m.params(), &fusion, 0, h, &[]).is_err());
}

#[test]
fn stage_two_trainable_count_matches_accounting() {
    let cfg = tiny();
    let mut m = fusion_model(&cfg, &["a", "b", "c"], 10);
    m.set_stage(&Stage::FusionTraining(TARGET.into()));
    let counted = count_parameters(&cfg, AccountingMode::Fusion(3), 6);
    assert_eq!(m.params().count(), counted);

    let mut single = adapter_model(&cfg, "a", 11);
    single.set_stage(&Stage::AdapterTraining("a".into()));
    // The head is named after the target, not the adapter.
    let head: usize = single
        .params()
        .iter()
        .filter(|(_, n, _)| n.starts_with("heads."))
        .map(|(_, _, t)| t.numel())
        .sum();
    let c = count_parameters(&cfg, AccountingMode::SingleAdapter, 6);
    assert_eq!(single.params().count().total, c.total);
    assert_eq!(single.params().count().trainable + head, c.trainable);
}

#[test]
fn full_scale_counts_round_to_reference_figures() {
    let cfg = ModelConfig::full_scale();
    let m = |c: usize| c as f64 / 1e6;
    let single = count_parameters(&cfg, AccountingMode::SingleAdapter, 6);
    let f3 = count_parameters(&cfg, AccountingMode::Fusion(3), 6);
    let f5 = count_parameters(&cfg, AccountingMode::Fusion(5), 6);
    assert!((m(single.trainable) - 1.5).abs() <= 0.1);
    assert!((m(f3.trainable) - 21.8).abs() <= 0.1);
    assert!((m(f3.total) - 132.8).abs() <= 1.0);
    assert!((m(f5.total) - 134.6).abs() <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_five_adds_exactly_two_adapters(
        layers in 1usize..6,
        heads in 1usize..5,
        head_dim in 1usize..9,
        r in 1usize..5,
        vocab in 5usize..500,
        labels in 1usize..8,
    ) {
        let h = heads * head_dim * r;
        let cfg = ModelConfig {
            num_layers: layers,
            hidden_size: h,
            num_heads: heads,
            ff_size: 2 * h,
            vocab_size: vocab,
            max_positions: 16,
            num_segments: 2,
            reduction_factor: r,
            eps: 1e-12,
            init_std: 0.02,
        };
        let adapter: usize = adapter_layout(&cfg, "x").iter().map(|s| s.numel()).sum();
        let f3 = count_parameters(&cfg, AccountingMode::Fusion(3), labels);
        let f5 = count_parameters(&cfg, AccountingMode::Fusion(5), labels);
        prop_assert_eq!(f5.total - f3.total, 2 * adapter);
        prop_assert_eq!(f5.trainable, f3.trainable);
        let ft = count_parameters(&cfg, AccountingMode::FineTune, labels);
        prop_assert_eq!(ft.total, ft.trainable);
    }
}
