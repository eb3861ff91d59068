//! Two-stage training: per-task adapters on a frozen encoder, then fusion
//! layers over frozen adapters; early stopping and multi-run averaging.

mod config;
mod encoder;
mod experiment;
mod fit;
mod stages;

pub use config::{EarlyStopMetric, ModelShape, TrainConfig};
pub use encoder::{encoder_of, fresh_encoder};
pub use experiment::{
    parallel_map, run_experiment, thread_cap, Experiment, ExperimentOutput, ExperimentReport,
    RunSummary, THREADS_ENV,
};
pub use fit::{
    evaluate, fit, loss_config_for, predict, report_from_logits, schema_for, EpochRecord, Splits,
    TaskData, TrainHistory, SPLITS,
};
pub use stages::{
    adapter_task, assemble_fusion_base, train_adapter, train_fusion, AuditEntry, FreezeAudit,
    RunOutput,
};
