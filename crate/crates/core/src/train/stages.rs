use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::fit::{evaluate, fit, TaskData, TrainHistory};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::error::{config_err, Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Model, ParamGroup, ParamStore, SlotMode, Stage};
use crate::task::TaskSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub group: String,
    pub before: String,
    pub after: String,
}

/// Digests of every frozen group before and after a training stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeAudit {
    pub entries: Vec<AuditEntry>,
}

impl FreezeAudit {
    pub fn ok(&self) -> bool {
        self.entries.iter().all(|e| e.before == e.after)
    }
}

fn group_digest(store: &ParamStore, group: &ParamGroup) -> String {
    store.digest(|g| g == group)
}

/// One finished training run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub valid: MetricsReport,
    pub test: MetricsReport,
    pub audit: FreezeAudit,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: Model,
    task: &TaskSpec,
    data: &TaskData,
    cfg: &TrainConfig,
    run_seed: u64,
    history: TrainHistory,
    audit: FreezeAudit,
    stage: Stage,
    encoder_seed: u64,
) -> Result<RunOutput> {
    if !audit.ok() {
        let bad: Vec<&str> = audit
            .entries
            .iter()
            .filter(|e| e.before != e.after)
            .map(|e| e.group.as_str())
            .collect();
        return Err(Error::Verification(format!(
            "frozen parameters changed: {bad:?}"
        )));
    }
    let valid = evaluate(&model, &data.valid, task, cfg, "valid", run_seed)?;
    let test = evaluate(&model, &data.test, task, cfg, "test", run_seed)?;
    let meta = CheckpointMeta {
        config: model.config().clone(),
        stage,
        seed: run_seed,
        encoder_seed,
        heads: model.heads().into_iter().cloned().collect(),
        fusion_tasks: model.fusion_tasks().map(<[String]>::to_vec),
        vocab: data.vocab.regular_tokens().to_vec(),
        train_config: Some(serde_json::to_value(cfg).expect("TrainConfig serializes")),
    };
    Ok(RunOutput {
        seed: run_seed,
        checkpoint: Checkpoint::from_model(&model, meta),
        history,
        valid,
        test,
        audit,
    })
}

/// Stage 1: a fresh adapter and head for `task` on the shared
/// `encoder`, which stays frozen.
pub fn train_adapter(
    task: &TaskSpec,
    encoder: &Checkpoint,
    data: &TaskData,
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<RunOutput> {
    cfg.validate()?;
    if encoder.meta.vocab.as_slice() != data.vocab.regular_tokens() {
        return config_err("task data was tokenized with a vocabulary other than the encoder's");
    }
    if let Some((_, name, _)) = encoder
        .params
        .iter()
        .find(|(id, _, _)| *encoder.params.group(*id) != ParamGroup::Encoder)
    {
        return config_err(format!(
            "encoder checkpoint contains non-encoder parameter {name}"
        ));
    }
    let mut model = Model::from_store(
        encoder.meta.config.clone(),
        encoder.params.clone(),
        &[],
        None,
    )?;
    model.add_adapter(&task.name, run_seed)?;
    model.add_head(task, run_seed)?;
    model.attach(SlotMode::Single(task.name.clone()))?;
    let stage = Stage::AdapterTraining(task.name.clone());
    model.set_stage(&stage);
    let before = group_digest(model.params(), &ParamGroup::Encoder);
    let history = fit(&mut model, task, data, cfg, run_seed)?;
    let audit = FreezeAudit {
        entries: vec![AuditEntry {
            group: ParamGroup::Encoder.to_string(),
            before,
            after: group_digest(model.params(), &ParamGroup::Encoder),
        }],
    };
    finish(
        model,
        task,
        data,
        cfg,
        run_seed,
        history,
        audit,
        stage,
        encoder.meta.encoder_seed,
    )
}

/// The task whose adapter a stage-1 checkpoint carries.
pub fn adapter_task(ck: &Checkpoint) -> Result<String> {
    let mut tasks = Vec::new();
    for (_, name, _) in ck.params.iter() {
        if let Some(ParamGroup::Adapter(t)) = ParamGroup::of(name) {
            if !tasks.contains(&t) {
                tasks.push(t);
            }
        }
    }
    match tasks.as_slice() {
        [t] => Ok(t.clone()),
        [] => config_err("checkpoint holds no adapter"),
        _ => config_err(format!("checkpoint holds several adapters {tasks:?}")),
    }
}

/// Builds the stage-2 model: the shared encoder plus each checkpoint's
/// adapter, in the given order. Every checkpoint must agree on model
/// configuration, vocabulary and encoder values.
pub fn assemble_fusion_base(adapters: &[Checkpoint]) -> Result<(Model, Vec<String>)> {
    let Some(first) = adapters.first() else {
        return config_err("fusion needs at least one adapter checkpoint");
    };
    let encoder = group_digest(&first.params, &ParamGroup::Encoder);
    let mut store = ParamStore::new();
    for (id, name, t) in first.params.iter() {
        if *first.params.group(id) == ParamGroup::Encoder {
            store.insert(name, t.clone())?;
        }
    }
    let mut tasks = Vec::new();
    for (i, ck) in adapters.iter().enumerate() {
        if ck.meta.config != first.meta.config {
            return config_err(format!(
                "adapter checkpoint {i} has a different model configuration"
            ));
        }
        if ck.meta.vocab != first.meta.vocab {
            return config_err(format!("adapter checkpoint {i} has a different vocabulary"));
        }
        if group_digest(&ck.params, &ParamGroup::Encoder) != encoder {
            return config_err(format!(
                "adapter checkpoint {i} was trained on a different encoder"
            ));
        }
        let task = adapter_task(ck)?;
        if tasks.contains(&task) {
            return config_err(format!("adapter `{task}` given twice"));
        }
        let group = ParamGroup::Adapter(task.clone());
        for (id, name, t) in ck.params.iter() {
            if *ck.params.group(id) == group {
                store.insert(name, t.clone())?;
            }
        }
        tasks.push(task);
    }
    Ok((
        Model::from_store(first.meta.config.clone(), store, &[], None)?,
        tasks,
    ))
}

/// Stage 2: fusion layers and a fresh head for `target`; the encoder and
/// every adapter stay frozen and are audited against their checkpoints.
pub fn train_fusion(
    target: &TaskSpec,
    adapters: &[Checkpoint],
    data: &TaskData,
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<RunOutput> {
    cfg.validate()?;
    let (mut model, tasks) = assemble_fusion_base(adapters)?;
    if data.vocab.regular_tokens() != adapters[0].meta.vocab.as_slice() {
        return config_err("task data was tokenized with a vocabulary other than the adapters'");
    }
    model.add_fusion(&tasks, run_seed)?;
    model.add_head(target, run_seed)?;
    model.attach(SlotMode::Fusion(tasks.clone()))?;
    let stage = Stage::FusionTraining(target.name.clone());
    model.set_stage(&stage);

    let mut groups = vec![(
        ParamGroup::Encoder,
        group_digest(&adapters[0].params, &ParamGroup::Encoder),
    )];
    for (t, ck) in tasks.iter().zip(adapters) {
        let g = ParamGroup::Adapter(t.clone());
        groups.push((g.clone(), group_digest(&ck.params, &g)));
    }
    let history = fit(&mut model, target, data, cfg, run_seed)?;
    let audit = FreezeAudit {
        entries: groups
            .into_iter()
            .map(|(g, before)| AuditEntry {
                group: g.to_string(),
                after: group_digest(model.params(), &g),
                before,
            })
            .collect(),
    };
    finish(
        model,
        target,
        data,
        cfg,
        run_seed,
        history,
        audit,
        stage,
        adapters[0].meta.encoder_seed,
    )
}
