//! Encoder, adapters, fusion and heads assembled into one trainable model.

mod accounting;
mod adapter;
mod config;
mod encoder;
mod head;
mod params;

pub use accounting::{count_parameters, AccountingMode};
pub use adapter::{
    adapter_forward, fusion_forward, AdapterLayer, AdapterParams, FusionLayer, FusionParams, Slot,
};
pub use config::ModelConfig;
pub use encoder::{
    attention_bias, embed, encode, encoder_layer_forward, multi_head_attention, Encoded,
    EncoderParams, LayerParams, LayerTrace, Linear, Norm, MASKED_SCORE,
};
pub use head::{head_forward, HeadParams};
pub use params::{
    adapter_layout, decays, encoder_layout, fusion_layout, group_rng, head_layout,
    validate_task_name, Init, ParamCount, ParamGroup, ParamSpec, ParamStore,
};

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{config_err, Result};
use crate::task::TaskSpec;
use crate::tensor::{Tape, Var};

/// How every encoder layer's adapter slot is wired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotMode {
    None,
    Single(String),
    Fusion(Vec<String>),
}

/// Which freeze groups train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Everything trainable (full fine-tuning, verification).
    Full,
    /// Stage 1: one task's adapter and head.
    AdapterTraining(String),
    /// Stage 2: the fusion layers and the target task's head.
    FusionTraining(String),
}

impl Stage {
    pub fn trainable(&self, group: &ParamGroup) -> bool {
        match (self, group) {
            (Stage::Full, _) => true,
            (Stage::AdapterTraining(t), ParamGroup::Adapter(g) | ParamGroup::Head(g)) => t == g,
            (Stage::FusionTraining(_), ParamGroup::Fusion) => true,
            (Stage::FusionTraining(t), ParamGroup::Head(g)) => t == g,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B × num_labels]`.
    pub logits: Var,
    pub encoded: Encoded,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    encoder: EncoderParams,
    adapters: Vec<AdapterParams>,
    fusion: Option<FusionParams>,
    heads: Vec<HeadParams>,
    slot: SlotMode,
}

impl Model {
    /// Fresh encoder initialized from `encoder_seed`; no adapters or heads.
    pub fn new(config: ModelConfig, encoder_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        params.init_layout(
            &encoder_layout(&config),
            &mut group_rng(encoder_seed, "encoder"),
        )?;
        Self::from_store(config, params, &[], None)
    }

    /// Rebuilds a model around already-populated parameters. Adapters are
    /// discovered from parameter names; heads and the fusion task order must
    /// be supplied.
    pub fn from_store(
        config: ModelConfig,
        params: ParamStore,
        heads: &[TaskSpec],
        fusion_tasks: Option<&[String]>,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderParams::resolve(&params, &config)?;
        let mut adapter_tasks: Vec<String> = Vec::new();
        for (_, name, _) in params.iter() {
            if let Some(ParamGroup::Adapter(t)) = ParamGroup::of(name) {
                if !adapter_tasks.contains(&t) {
                    adapter_tasks.push(t);
                }
            }
        }
        let adapters = adapter_tasks
            .iter()
            .map(|t| AdapterParams::resolve(&params, &config, t))
            .collect::<Result<_>>()?;
        let heads = heads
            .iter()
            .map(|t| HeadParams::resolve(&params, t))
            .collect::<Result<_>>()?;
        let fusion = match fusion_tasks {
            Some(tasks) => Some(FusionParams::resolve(&params, &config, tasks)?),
            None => None,
        };
        let model = Self {
            config,
            params,
            encoder,
            adapters,
            fusion,
            heads,
            slot: SlotMode::None,
        };
        if let Some(f) = &model.fusion {
            for t in &f.tasks {
                model.adapter(t)?;
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn slot(&self) -> &SlotMode {
        &self.slot
    }

    pub fn adapter_tasks(&self) -> Vec<&str> {
        self.adapters.iter().map(|a| a.task.as_str()).collect()
    }

    pub fn fusion_tasks(&self) -> Option<&[String]> {
        self.fusion.as_ref().map(|f| f.tasks.as_slice())
    }

    pub fn heads(&self) -> Vec<&TaskSpec> {
        self.heads.iter().map(|h| &h.task).collect()
    }

    pub fn head(&self, task: &str) -> Result<&HeadParams> {
        match self.heads.iter().find(|h| h.task.name == task) {
            Some(h) => Ok(h),
            None => config_err(format!("no head for task `{task}`")),
        }
    }

    fn adapter(&self, task: &str) -> Result<&AdapterParams> {
        match self.adapters.iter().find(|a| a.task == task) {
            Some(a) => Ok(a),
            None => config_err(format!("no adapter for task `{task}`")),
        }
    }

    pub fn add_adapter(&mut self, task: &str, seed: u64) -> Result<()> {
        validate_task_name(task)?;
        if self.adapter(task).is_ok() {
            return config_err(format!("adapter `{task}` already present"));
        }
        let layout = adapter_layout(&self.config, task);
        self.params
            .init_layout(&layout, &mut group_rng(seed, &format!("adapters.{task}")))?;
        self.adapters
            .push(AdapterParams::resolve(&self.params, &self.config, task)?);
        Ok(())
    }

    pub fn add_head(&mut self, task: &TaskSpec, seed: u64) -> Result<()> {
        validate_task_name(&task.name)?;
        if self.head(&task.name).is_ok() {
            return config_err(format!("head `{}` already present", task.name));
        }
        let layout = head_layout(&self.config, &task.name, task.kind.num_labels());
        self.params.init_layout(
            &layout,
            &mut group_rng(seed, &format!("heads.{}", task.name)),
        )?;
        self.heads.push(HeadParams::resolve(&self.params, task)?);
        Ok(())
    }

    /// Adds fusion layers over already-present adapters, in `tasks` order.
    pub fn add_fusion(&mut self, tasks: &[String], seed: u64) -> Result<()> {
        if self.fusion.is_some() {
            return config_err("model already has fusion layers");
        }
        if tasks.is_empty() {
            return config_err("fusion needs at least one adapter");
        }
        for t in tasks {
            self.adapter(t)?;
        }
        self.params
            .init_layout(&fusion_layout(&self.config), &mut group_rng(seed, "fusion"))?;
        self.fusion = Some(FusionParams::resolve(&self.params, &self.config, tasks)?);
        Ok(())
    }

    /// Sets the slot mode used by every layer.
    pub fn attach(&mut self, mode: SlotMode) -> Result<()> {
        match &mode {
            SlotMode::None => {}
            SlotMode::Single(t) => {
                self.adapter(t)?;
            }
            SlotMode::Fusion(tasks) => match &self.fusion {
                Some(f) if &f.tasks == tasks => {}
                Some(f) => {
                    return config_err(format!(
                        "fusion layers were built for {:?}, not {tasks:?}",
                        f.tasks
                    ))
                }
                None => return config_err("fusion mode requested but model has no fusion layers"),
            },
        }
        self.slot = mode;
        Ok(())
    }

    pub fn set_stage(&mut self, stage: &Stage) {
        self.params.set_trainable_where(|g| stage.trainable(g));
    }

    fn slot_view(&self) -> Result<Slot<'_>> {
        Ok(match &self.slot {
            SlotMode::None => Slot::None,
            SlotMode::Single(t) => Slot::Single(self.adapter(t)?),
            SlotMode::Fusion(_) => {
                let fusion = self.fusion.as_ref().expect("attach checked fusion");
                Slot::Fusion {
                    adapters: fusion
                        .tasks
                        .iter()
                        .map(|t| self.adapter(t))
                        .collect::<Result<_>>()?,
                    fusion,
                }
            }
        })
    }

    pub fn encode(&self, tape: &mut Tape, batch: &Batch) -> Result<Encoded> {
        let slot = self.slot_view()?;
        encode(
            tape,
            &self.params,
            &self.config,
            &self.encoder,
            batch,
            &slot,
        )
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch, task: &str) -> Result<ForwardOutput> {
        self.forward_with(&self.params, tape, batch, task)
    }

    /// Forward pass reading values from `store`, which must be a copy of
    /// this model's parameters (same names in the same order).
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
        task: &str,
    ) -> Result<ForwardOutput> {
        if store.len() != self.params.len() {
            return config_err("parameter store does not match the model layout");
        }
        let head = self.head(task)?;
        let slot = self.slot_view()?;
        let encoded = encode(tape, store, &self.config, &self.encoder, batch, &slot)?;
        let logits = head_forward(tape, store, head, encoded.cls)?;
        Ok(ForwardOutput { logits, encoded })
    }

    /// Moves gradients recorded on `tape` into the parameter store.
    pub fn collect_grads(&mut self, tape: &Tape) -> Result<()> {
        for (id, g) in tape.param_grads() {
            self.params.get_mut(id).accumulate_grad(g)?;
        }
        Ok(())
    }
}
