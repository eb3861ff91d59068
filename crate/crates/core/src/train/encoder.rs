//! The frozen encoder every adapter of an experiment shares, together with
//! the vocabulary its embedding table was built for.

use super::config::TrainConfig;
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::Vocabulary;
use crate::error::{config_err, Result};
use crate::model::{Model, ParamGroup, ParamStore, Stage};

/// A randomly initialized encoder seeded by `cfg.encoder_seed`.
pub fn fresh_encoder(vocab: &Vocabulary, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config(vocab.len()), cfg.encoder_seed)?;
    Ok(Checkpoint {
        meta: CheckpointMeta {
            config: model.config().clone(),
            stage: Stage::Full,
            seed: cfg.encoder_seed,
            encoder_seed: cfg.encoder_seed,
            heads: Vec::new(),
            fusion_tasks: None,
            vocab: vocab.regular_tokens().to_vec(),
            train_config: None,
        },
        params: model.params().clone(),
    })
}

/// The encoder part of any checkpoint, plus its vocabulary.
pub fn encoder_of(ck: &Checkpoint) -> Result<(Checkpoint, Vocabulary)> {
    let mut params = ParamStore::new();
    for (id, name, t) in ck.params.iter() {
        if *ck.params.group(id) == ParamGroup::Encoder {
            params.insert(name, t.clone())?;
        }
    }
    if params.is_empty() {
        return config_err("checkpoint holds no encoder parameters");
    }
    let vocab = Vocabulary::from_tokens(ck.meta.vocab.iter().map(String::as_str))?;
    if vocab.len() != ck.meta.config.vocab_size {
        return config_err(format!(
            "checkpoint vocabulary has {} entries but the embedding table {}",
            vocab.len(),
            ck.meta.config.vocab_size
        ));
    }
    let meta = CheckpointMeta {
        stage: Stage::Full,
        heads: Vec::new(),
        fusion_tasks: None,
        train_config: None,
        ..ck.meta.clone()
    };
    Ok((Checkpoint { meta, params }, vocab))
}
