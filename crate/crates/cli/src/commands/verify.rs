use serde::Serialize;

use fuseformer::model::{count_parameters, AccountingMode, ModelConfig, ParamCount};
use fuseformer::tensor::FdOptions;
use fuseformer::train::TrainConfig;
use fuseformer::verify::{grad_check as check, GradCheckOptions};

use crate::error::{CliError, CliResult};
use crate::output::OutDir;
use crate::{CountParamsArgs, GradCheckArgs, Scale};

pub fn grad_check(args: &GradCheckArgs) -> CliResult<()> {
    let train = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if args.vocab_size <= fuseformer::data::NUM_SPECIALS {
        return Err(CliError::input(
            "--vocab-size must exceed the four special tokens",
        ));
    }
    if !(args.step > 0.0 && args.tol > 0.0) {
        return Err(CliError::input("--step and --tol must be positive"));
    }
    let cfg = train.model_config(args.vocab_size);
    let opts = GradCheckOptions {
        fd: FdOptions {
            h: args.step,
            tol: args.tol,
            max_coords: (args.max_coords > 0).then_some(args.max_coords),
            seed: args.seed,
        },
        corrupt_gradient: args.corrupt_gradient,
        ..GradCheckOptions::default()
    };
    let report = check(&cfg, &opts)?;
    println!(
        "{} layers, H = {}, {} heads, r = {}; h = {:e}, tol = {:e}",
        cfg.num_layers,
        cfg.hidden_size,
        cfg.num_heads,
        cfg.reduction_factor,
        opts.fd.h,
        opts.fd.tol
    );
    println!(
        "{:<14}{:>8}{:>8}{:>14}  status",
        "block", "tensors", "coords", "max rel err"
    );
    for b in &report.blocks {
        println!(
            "{:<14}{:>8}{:>8}{:>14.3e}  {}",
            b.block,
            b.tensors,
            b.coords_checked,
            b.max_rel_err,
            if b.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = &args.out {
        OutDir::new(dir).write_json("grad-check.json", &report)?;
    }
    if report.passed() {
        return Ok(());
    }
    let mut worst = Vec::new();
    for b in report.blocks.iter().filter(|b| !b.passed) {
        println!(
            "worst in {}: {}[{}] analytic {:.9e} numeric {:.9e}",
            b.block, b.worst_param, b.worst_coord, b.analytic, b.numeric
        );
        worst.push(b.block.as_str());
    }
    Err(CliError::Verification(format!(
        "gradient mismatch in {worst:?}"
    )))
}

#[derive(Debug, Serialize)]
struct ModeCount {
    mode: String,
    total: usize,
    trainable: usize,
}

#[derive(Debug, Serialize)]
struct CountReport {
    config: ModelConfig,
    labels: usize,
    modes: Vec<ModeCount>,
    adapter_per_task: usize,
    fusion5_minus_fusion3: usize,
}

fn millions(n: usize) -> String {
    format!("{:.2} M", n as f64 / 1e6)
}

pub fn count_params(args: &CountParamsArgs) -> CliResult<()> {
    let cfg = match args.scale {
        Scale::Full => ModelConfig::full_scale(),
        Scale::Desk => ModelConfig::desk(args.vocab_size),
    };
    cfg.validate()?;
    if args.labels == 0 {
        return Err(CliError::input("--labels must be positive"));
    }
    let count = |mode| -> ParamCount { count_parameters(&cfg, mode, args.labels) };
    let modes = [
        ("fine-tune", AccountingMode::FineTune),
        ("adapter", AccountingMode::SingleAdapter),
        ("fusion-3", AccountingMode::Fusion(3)),
        ("fusion-5", AccountingMode::Fusion(5)),
    ]
    .into_iter()
    .map(|(name, mode)| {
        let c = count(mode);
        ModeCount {
            mode: name.to_string(),
            total: c.total,
            trainable: c.trainable,
        }
    })
    .collect::<Vec<_>>();
    let adapter_per_task = modes[1].total - modes[0].total;
    let report = CountReport {
        fusion5_minus_fusion3: modes[3].total - modes[2].total,
        adapter_per_task,
        modes,
        labels: args.labels,
        config: cfg,
    };
    println!(
        "{:<10}{:>14}{:>10}{:>14}{:>10}",
        "mode", "total", "", "trainable", ""
    );
    for m in &report.modes {
        println!(
            "{:<10}{:>14}{:>10}{:>14}{:>10}",
            m.mode,
            m.total,
            millions(m.total),
            m.trainable,
            millions(m.trainable)
        );
    }
    println!(
        "fusion-5 minus fusion-3 total: {} = 2 x {} per-task adapter parameters",
        report.fusion5_minus_fusion3, report.adapter_per_task
    );
    if let Some(dir) = &args.out {
        OutDir::new(dir).write_json("count-params.json", &report)?;
    }
    Ok(())
}
