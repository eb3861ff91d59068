use fuseformer::checkpoint::load_checkpoint;
use fuseformer::data::{Dataset, Vocabulary};
use fuseformer::train::{evaluate as score, schema_for, TrainConfig};

use super::load_split;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;
use crate::EvaluateArgs;

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let task = match (&args.task, ck.meta.heads.as_slice()) {
        (Some(name), heads) => heads
            .iter()
            .find(|h| &h.name == name)
            .cloned()
            .ok_or_else(|| CliError::input(format!("checkpoint has no head `{name}`")))?,
        (None, [only]) => only.clone(),
        (None, []) => return Err(CliError::input("checkpoint has no classification head")),
        (None, heads) => {
            let names: Vec<&str> = heads.iter().map(|h| h.name.as_str()).collect();
            return Err(CliError::input(format!(
                "checkpoint has heads {names:?}; pick one with --task"
            )));
        }
    };
    // Score exactly as training did: same batch size, token budget and
    // threshold unless overridden.
    let mut cfg: TrainConfig = match &ck.meta.train_config {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| CliError::input(format!("checkpoint training config: {e}")))?,
        None => TrainConfig {
            max_len: ck.meta.config.max_positions,
            ..TrainConfig::default()
        },
    };
    if let Some(t) = args.threshold {
        cfg.threshold = t;
    }
    cfg.validate()?;
    let vocab = Vocabulary::from_tokens(ck.meta.vocab.iter().map(String::as_str))?;
    let raw = load_split(&args.corpus, &args.split, schema_for(task.kind))?;
    let data = Dataset::encode(&raw, task.kind, &vocab, cfg.max_len)?;
    let seed = ck.meta.seed;
    let model = ck.into_model()?;
    let report = score(&model, &data, &task, &cfg, &args.split, seed)?;

    let table = report.to_table();
    print!("{table}");
    let out = OutDir::new(&args.out);
    out.write_json("evaluation.json", &report)?;
    out.write_text("evaluation.txt", &table)?;
    Ok(())
}
