//! Fixtures shared by the benchmarks under `benches/`.

use fuseformer::data::{synth_corpus, Batch, Dataset, SynthSpec, Vocabulary};
use fuseformer::loss::{pos_weights, task_loss, FocalParams, LossConfig, LossKind, Reduction};
use fuseformer::model::{Model, SlotMode, Stage};
use fuseformer::optim::AdamW;
use fuseformer::task::{TaskKind, TaskSpec};
use fuseformer::tensor::Tape;
use fuseformer::train::{fresh_encoder, TrainConfig};

/// Deterministic pseudo-random values in [-1, 1).
pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

/// A desk-scale stage-2 model over three adapters, one training batch and
/// its loss settings.
pub struct StepFixture {
    pub model: Model,
    pub batch: Batch,
    pub loss: LossConfig,
    pub opt: AdamW,
}

pub const TARGET: &str = "emotion";

pub fn fusion_step_fixture(batch_size: usize) -> StepFixture {
    let cfg = TrainConfig {
        max_len: 16,
        ..TrainConfig::default()
    };
    let corpus = synth_corpus(0, batch_size, &SynthSpec::default()).expect("valid spec");
    let vocab = Vocabulary::build(corpus.iter().map(|e| e.text.as_str()), cfg.max_vocab)
        .expect("non-empty corpus");
    let encoder = fresh_encoder(&vocab, &cfg).expect("encoder");
    let mut model = encoder.into_model().expect("encoder checkpoint");
    let tasks: Vec<String> = ["sent2", "sent7", "emotion"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (i, t) in tasks.iter().enumerate() {
        model.add_adapter(t, i as u64).expect("adapter");
    }
    model.add_fusion(&tasks, 7).expect("fusion");
    model
        .add_head(&TaskSpec::of_kind(TaskKind::Emotion), 8)
        .expect("head");
    model.attach(SlotMode::Fusion(tasks)).expect("attach");
    model.set_stage(&Stage::FusionTraining(TARGET.into()));

    let data = Dataset::encode(&corpus, TaskKind::Emotion, &vocab, cfg.max_len).expect("encode");
    let order: Vec<usize> = (0..data.len()).collect();
    let batch = data
        .batches(&order, batch_size)
        .next()
        .expect("one batch")
        .expect("batch")
        .trim_padding();
    let stats = fuseformer::data::class_statistics(&corpus, TaskKind::Emotion).expect("stats");
    StepFixture {
        model,
        batch,
        loss: LossConfig {
            kind: LossKind::WeightedBce,
            reduction: Reduction::BatchMean,
            focal: FocalParams::default(),
            pos_weights: Some(pos_weights(&stats)),
        },
        opt: AdamW::new(cfg.adamw()),
    }
}

impl StepFixture {
    /// Forward, backward and one AdamW update; returns the loss.
    pub fn step(&mut self, lr: f64) -> f64 {
        let mut tape = Tape::new();
        let out = self
            .model
            .forward(&mut tape, &self.batch, TARGET)
            .expect("forward");
        let loss = task_loss(&mut tape, out.logits, &self.batch.labels, &self.loss).expect("loss");
        let value = tape.scalar(loss);
        tape.backward(loss).expect("backward");
        self.model.params_mut().zero_grads();
        self.model.collect_grads(&tape).expect("grads");
        self.opt.step(self.model.params_mut(), lr).expect("adamw");
        value
    }
}
