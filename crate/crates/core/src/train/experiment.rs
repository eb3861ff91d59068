use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::fit::{EpochRecord, TaskData};
use super::stages::{train_adapter, train_fusion, FreezeAudit, RunOutput};
use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::metrics::{mean_report, MetricsReport};
use crate::model::ModelConfig;
use crate::task::TaskSpec;

pub const THREADS_ENV: &str = "FUSEFORMER_THREADS";

/// Worker cap for independent runs: `FUSEFORMER_THREADS` if set and
/// positive, otherwise the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluates `job(i)` for `i in 0..n` on at most `threads` workers and
/// returns results in index order. The first error by index wins.
pub fn parallel_map<T: Send>(
    n: usize,
    threads: usize,
    job: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = job(i);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every index ran"))
        .collect()
}

/// What to run for each seed.
#[derive(Debug, Clone, Copy)]
pub enum Experiment<'a> {
    Adapter {
        task: &'a TaskSpec,
        encoder: &'a Checkpoint,
    },
    Fusion {
        target: &'a TaskSpec,
        adapters: &'a [Checkpoint],
    },
}

impl Experiment<'_> {
    fn task(&self) -> &TaskSpec {
        match self {
            Experiment::Adapter { task, .. } => task,
            Experiment::Fusion { target, .. } => target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
    pub loss_curve: Vec<f64>,
    pub valid: MetricsReport,
    pub test: MetricsReport,
    pub audit: FreezeAudit,
}

impl RunSummary {
    fn of(run: &RunOutput) -> Self {
        Self {
            seed: run.seed,
            epochs_run: run.history.epochs.len(),
            best_epoch: run.history.best_epoch,
            stopped_early: run.history.stopped_early,
            history: run.history.epochs.clone(),
            loss_curve: run.history.loss_curve.clone(),
            valid: run.valid.clone(),
            test: run.test.clone(),
            audit: run.audit.clone(),
        }
    }
}

/// Deterministic given the configuration and data; carries the resolved
/// configuration so the result can be reproduced from the report alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: TaskSpec,
    pub stage: String,
    pub fused_adapters: Option<Vec<String>>,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub runs: Vec<RunSummary>,
    /// Mean of the runs' test reports.
    pub mean: MetricsReport,
    /// Index of the run with the best validation selection metric.
    pub best_run: usize,
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub runs: Vec<RunOutput>,
}

/// Runs `cfg.runs` seeded trainings (seeds `seed`, `seed + 1`, …) and
/// aggregates their test reports.
pub fn run_experiment(
    exp: Experiment<'_>,
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let runs = parallel_map(cfg.runs, thread_cap(), |i| {
        let seed = cfg.seed.wrapping_add(i as u64);
        match exp {
            Experiment::Adapter { task, encoder } => train_adapter(task, encoder, data, cfg, seed),
            Experiment::Fusion { target, adapters } => {
                train_fusion(target, adapters, data, cfg, seed)
            }
        }
    })?;
    let tests: Vec<MetricsReport> = runs.iter().map(|r| r.test.clone()).collect();
    let mut mean = mean_report(&tests)?;
    mean.seed = cfg.seed;
    let best_run = runs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, r)| {
            if r.history.best_metric > best.1 {
                (i, r.history.best_metric)
            } else {
                best
            }
        })
        .0;
    let first = &runs[0].checkpoint.meta;
    let report = ExperimentReport {
        task: exp.task().clone(),
        stage: match exp {
            Experiment::Adapter { .. } => "adapter".into(),
            Experiment::Fusion { .. } => "fusion".into(),
        },
        fused_adapters: first.fusion_tasks.clone(),
        config: cfg.clone(),
        model: first.config.clone(),
        runs: runs.iter().map(RunSummary::of).collect(),
        mean,
        best_run,
    };
    Ok(ExperimentOutput { report, runs })
}
