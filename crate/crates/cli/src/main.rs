mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fuseformer::loss::{LossKind, Reduction};
use fuseformer::task::TaskKind;
use fuseformer::train::TrainConfig;

use error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "fuseformer",
    version,
    about = "Adapter fusion training for multi-label emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-class positive counts and positive weights w_c of a training split.
    Stats(StatsArgs),
    /// Writes a synthetic imbalanced corpus as train/valid/test JSONL.
    Synth(SynthArgs),
    /// Stage 1: trains a task adapter and head on the frozen encoder.
    TrainAdapter(TrainAdapterArgs),
    /// Stage 2: trains fusion layers and a head over frozen adapters.
    TrainFusion(TrainFusionArgs),
    /// Scores a checkpoint on a corpus split.
    Evaluate(EvaluateArgs),
    /// Compares analytic gradients with central differences per block.
    GradCheck(GradCheckArgs),
    /// Total and trainable parameter counts per training mode.
    CountParams(CountParamsArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus file, or a directory whose train.jsonl is read.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "emotion")]
    pub task: TaskKind,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    /// `sentiment` plus six `emotions`.
    Mosei,
    /// `binary_label` from the sentiment sign.
    Binary,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub valid: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, value_enum, default_value = "mosei")]
    pub style: Style,
    /// Six emotion priors, comma separated; defaults to the reference
    /// corpus proportions.
    #[arg(long, value_delimiter = ',', num_args = 6)]
    pub priors: Option<Vec<f64>>,
}

/// Training settings: a JSON config file, then flag overrides.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub loss_reduction: Option<Reduction>,
}

impl TrainFlags {
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.loss {
            cfg.loss = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.warmup_steps {
            cfg.warmup_steps = v;
        }
        if let Some(v) = self.loss_reduction {
            cfg.loss_reduction = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainAdapterArgs {
    /// Directory holding train.jsonl, valid.jsonl and test.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    /// Adapter and head name; defaults to the task kind.
    #[arg(long)]
    pub name: Option<String>,
    /// Checkpoint whose encoder and vocabulary are reused. Without it a
    /// fresh encoder is built and written to `<out>/encoder.afck`.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainFusionArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    #[arg(long)]
    pub name: Option<String>,
    /// Stage-1 checkpoints, in fusion order; repeat or comma separate.
    #[arg(long = "adapter", required = true, value_delimiter = ',')]
    pub adapters: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus file, or a directory whose `<split>.jsonl` is read.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Head to score; required only when the checkpoint has several.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Training config whose model shape is checked; desk shape otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Coordinates probed per tensor; 0 probes all of them.
    #[arg(long, default_value_t = 32)]
    pub max_coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Also writes grad-check.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturbs one analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// 12 layers, H = 768, cased base vocabulary.
    Full,
    /// The desk training shape.
    Desk,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub scale: Scale,
    /// Vocabulary size for the desk scale.
    #[arg(long, default_value_t = 30_000)]
    pub vocab_size: usize,
    /// Head outputs.
    #[arg(long, default_value_t = 6)]
    pub labels: usize,
    /// Also writes count-params.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Stats(a) => commands::data::stats(&a),
        Command::Synth(a) => commands::data::synth(&a),
        Command::TrainAdapter(a) => commands::train::train_adapter(&a),
        Command::TrainFusion(a) => commands::train::train_fusion(&a),
        Command::Evaluate(a) => commands::evaluate::evaluate(&a),
        Command::GradCheck(a) => commands::verify::grad_check(&a),
        Command::CountParams(a) => commands::verify::count_params(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
