use serde::Serialize;

use fuseformer::data::{synth_corpus, to_binary_style, write_corpus, SynthSpec};
use fuseformer::loss::pos_weights;
use fuseformer::task::TaskKind;
use fuseformer::train::{schema_for, SPLITS};

use super::load_split;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;
use crate::{StatsArgs, Style, SynthArgs};

#[derive(Debug, Serialize)]
struct ClassRow {
    name: String,
    positives: usize,
    negatives: usize,
    proportion: f64,
    pos_weight: f64,
}

#[derive(Debug, Serialize)]
struct StatsReport {
    task: TaskKind,
    examples: usize,
    classes: Vec<ClassRow>,
}

pub fn stats(args: &StatsArgs) -> CliResult<()> {
    let corpus = load_split(&args.corpus, "train", schema_for(args.task))?;
    let stats = fuseformer::data::class_statistics(&corpus, args.task)?;
    let w = pos_weights(&stats);
    let classes: Vec<ClassRow> = args
        .task
        .class_names()
        .into_iter()
        .enumerate()
        .map(|(c, name)| ClassRow {
            name,
            positives: stats.positives[c],
            negatives: stats.negatives[c],
            proportion: stats.proportions()[c],
            pos_weight: w.0[c],
        })
        .collect();
    println!(
        "{:<14}{:>10}{:>10}{:>12}{:>10}",
        "class", "positives", "negatives", "proportion", "w_c"
    );
    for r in &classes {
        println!(
            "{:<14}{:>10}{:>10}{:>12.4}{:>10.4}",
            r.name, r.positives, r.negatives, r.proportion, r.pos_weight
        );
    }
    let out = OutDir::new(&args.out);
    let path = out.write_json(
        "stats.json",
        &StatsReport {
            task: args.task,
            examples: corpus.len(),
            classes,
        },
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut spec = SynthSpec::default();
    if let Some(p) = &args.priors {
        spec.class_priors = p
            .as_slice()
            .try_into()
            .map_err(|_| CliError::input("--priors takes exactly six values"))?;
    }
    let out = OutDir::new(&args.out);
    for (i, (split, n)) in SPLITS
        .iter()
        .zip([args.train, args.valid, args.test])
        .enumerate()
    {
        // Distinct, non-overlapping seeds per (seed, split).
        let seed = args
            .seed
            .wrapping_mul(SPLITS.len() as u64)
            .wrapping_add(i as u64);
        let mut corpus = synth_corpus(seed, n, &spec)?;
        if args.style == Style::Binary {
            corpus = to_binary_style(&corpus);
        }
        let path = out.path(&format!("{split}.jsonl"))?;
        write_corpus(&path, &corpus)?;
        println!("wrote {} ({n} examples)", path.display());
    }
    Ok(())
}
