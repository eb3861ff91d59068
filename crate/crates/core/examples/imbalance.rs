//! Trains one emotion adapter with plain and weighted BCE on the synthetic
//! imbalanced corpus and prints both test tables.
//!
//! `cargo run --release -p fuseformer --example imbalance -- [seed]`

use std::time::Instant;

use fuseformer::data::{synth_corpus, SynthSpec, Vocabulary};
use fuseformer::loss::LossKind;
use fuseformer::task::{TaskKind, TaskSpec};
use fuseformer::train::{fresh_encoder, train_adapter, Splits, TaskData, TrainConfig};

fn main() -> fuseformer::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let spec = SynthSpec::default();
    let splits = Splits {
        train: synth_corpus(100, 4000, &spec)?,
        valid: synth_corpus(200, 500, &spec)?,
        test: synth_corpus(300, 1000, &spec)?,
    };
    let vocab = Vocabulary::build(splits.train.iter().map(|e| e.text.as_str()), 30_000)?;
    let cfg = TrainConfig {
        lr: 1e-3,
        max_len: 16,
        runs: 1,
        ..TrainConfig::default()
    };
    let encoder = fresh_encoder(&vocab, &cfg)?;
    let data = TaskData::prepare(&splits, TaskKind::Emotion, vocab, cfg.max_len)?;
    let task = TaskSpec::of_kind(TaskKind::Emotion);
    for loss in [LossKind::Bce, LossKind::WeightedBce] {
        let cfg = TrainConfig {
            loss,
            ..cfg.clone()
        };
        let t = Instant::now();
        let run = train_adapter(&task, &encoder, &data, &cfg, seed)?;
        println!(
            "{loss}: {} epochs, best {}, {:.1}s",
            run.history.epochs.len(),
            run.history.best_epoch,
            t.elapsed().as_secs_f64()
        );
        print!("{}", run.test.to_table());
    }
    Ok(())
}
