use std::fmt::Write as _;
use std::path::Path;

use fuseformer::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use fuseformer::data::Vocabulary;
use fuseformer::task::{TaskKind, TaskSpec};
use fuseformer::train::{
    encoder_of, fresh_encoder, run_experiment, schema_for, Experiment, ExperimentOutput, Splits,
    TaskData, TrainConfig,
};

use super::load_split;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;
use crate::{TrainAdapterArgs, TrainFusionArgs};

fn load_splits(corpus: &Path, kind: TaskKind) -> CliResult<Splits> {
    let schema = schema_for(kind);
    Ok(Splits {
        train: load_split(corpus, "train", schema)?,
        valid: load_split(corpus, "valid", schema)?,
        test: load_split(corpus, "test", schema)?,
    })
}

fn check_max_len(cfg: &TrainConfig, ck: &Checkpoint) -> CliResult<()> {
    let positions = ck.meta.config.max_positions;
    if cfg.max_len > positions {
        return Err(CliError::input(format!(
            "max_len {} exceeds the checkpoint's {positions} positions",
            cfg.max_len
        )));
    }
    Ok(())
}

fn save(out: &OutDir, name: &str, ck: &Checkpoint) -> CliResult<()> {
    let path = out.path(name)?;
    save_checkpoint(&path, &ck.meta, &ck.params)?;
    Ok(())
}

/// Writes per-run reports and checkpoints, the aggregate report and the
/// best run's checkpoint as `checkpoint_name`, and prints a summary.
fn write_experiment(
    out: &OutDir,
    output: &ExperimentOutput,
    checkpoint_name: &str,
) -> CliResult<()> {
    let report = &output.report;
    let mut text = String::new();
    for (i, (summary, run)) in report.runs.iter().zip(&output.runs).enumerate() {
        let dir = format!("runs/run-{i}");
        out.write_json(&format!("{dir}/report.json"), summary)?;
        save(out, &format!("{dir}/{checkpoint_name}"), &run.checkpoint)?;
        writeln!(
            text,
            "run {i} (seed {}): {} epochs, best epoch {}{}, valid {:.4}",
            summary.seed,
            summary.epochs_run,
            summary.best_epoch,
            if summary.stopped_early {
                ", stopped early"
            } else {
                ""
            },
            summary.valid.selection_metric(),
        )
        .expect("write to String");
    }
    save(
        out,
        checkpoint_name,
        &output.runs[report.best_run].checkpoint,
    )?;
    writeln!(text, "best run: {}", report.best_run).expect("write to String");
    writeln!(text, "test, mean of {} run(s):", report.runs.len()).expect("write to String");
    text.push_str(&report.mean.to_table());
    out.write_json("report.json", report)?;
    out.write_text("report.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn train_adapter(args: &TrainAdapterArgs) -> CliResult<()> {
    let cfg = args.train.resolve()?;
    let splits = load_splits(&args.corpus, args.task)?;
    let out = OutDir::new(&args.out);
    let (encoder, vocab) = match &args.encoder {
        Some(path) => encoder_of(&load_checkpoint(path)?)?,
        None => {
            let vocab =
                Vocabulary::build(splits.train.iter().map(|e| e.text.as_str()), cfg.max_vocab)?;
            let encoder = fresh_encoder(&vocab, &cfg)?;
            save(&out, "encoder.afck", &encoder)?;
            (encoder, vocab)
        }
    };
    check_max_len(&cfg, &encoder)?;
    let data = TaskData::prepare(&splits, args.task, vocab, cfg.max_len)?;
    let task = TaskSpec::new(
        args.name.as_deref().unwrap_or(args.task.as_str()),
        args.task,
    );
    let output = run_experiment(
        Experiment::Adapter {
            task: &task,
            encoder: &encoder,
        },
        &data,
        &cfg,
    )?;
    write_experiment(&out, &output, "adapter.afck")?;
    out.write_metadata(
        "train-adapter",
        serde_json::json!({
            "corpus": args.corpus,
            "encoder": args.encoder,
            "config": args.train.config,
        }),
    )?;
    Ok(())
}

pub fn train_fusion(args: &TrainFusionArgs) -> CliResult<()> {
    let cfg = args.train.resolve()?;
    let adapters = args
        .adapters
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>, _>>()?;
    check_max_len(&cfg, &adapters[0])?;
    let vocab = Vocabulary::from_tokens(adapters[0].meta.vocab.iter().map(String::as_str))?;
    let splits = load_splits(&args.corpus, args.task)?;
    let data = TaskData::prepare(&splits, args.task, vocab, cfg.max_len)?;
    let task = TaskSpec::new(
        args.name.as_deref().unwrap_or(args.task.as_str()),
        args.task,
    );
    let output = run_experiment(
        Experiment::Fusion {
            target: &task,
            adapters: &adapters,
        },
        &data,
        &cfg,
    )?;

    for (i, run) in output.report.runs.iter().enumerate() {
        for e in &run.audit.entries {
            println!(
                "run {i} {:<24} {} -> {}",
                e.group,
                &e.before[..16],
                &e.after[..16]
            );
        }
    }
    // Every run's audit already passed or training would have failed.
    if output.report.runs.iter().all(|r| r.audit.ok()) {
        println!("FROZEN OK");
    } else {
        return Err(CliError::Verification("frozen parameters changed".into()));
    }
    let out = OutDir::new(&args.out);
    write_experiment(&out, &output, "fusion.afck")?;
    out.write_metadata(
        "train-fusion",
        serde_json::json!({
            "corpus": args.corpus,
            "adapters": args.adapters,
            "config": args.train.config,
        }),
    )?;
    Ok(())
}
