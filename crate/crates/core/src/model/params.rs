use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{config_err, Result};
use crate::tensor::{ParameterBlocks, Tensor};

/// Freeze group a parameter belongs to, derived from its dotted name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Adapter(String),
    Fusion,
    Head(String),
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<Self> {
        let mut parts = name.split('.');
        match parts.next()? {
            "encoder" => Some(ParamGroup::Encoder),
            "fusion" => Some(ParamGroup::Fusion),
            "adapters" => Some(ParamGroup::Adapter(parts.next()?.to_string())),
            "heads" => Some(ParamGroup::Head(parts.next()?.to_string())),
            _ => None,
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamGroup::Encoder => f.write_str("encoder"),
            ParamGroup::Fusion => f.write_str("fusion"),
            ParamGroup::Adapter(t) => write!(f, "adapters.{t}"),
            ParamGroup::Head(t) => write!(f, "heads.{t}"),
        }
    }
}

/// Biases and layer-norm parameters are exempt from weight decay.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains(".norm."))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn group(&self) -> ParamGroup {
        ParamGroup::of(&self.name).expect("layout names carry a group prefix")
    }
}

const ADAPTER_UP_STD: f64 = 1e-4;

fn linear(
    out: &mut Vec<ParamSpec>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    std: f64,
    bias: bool,
) {
    out.push(ParamSpec::new(
        format!("{prefix}.weight"),
        vec![fan_in, fan_out],
        Init::Normal(std),
    ));
    if bias {
        out.push(ParamSpec::new(
            format!("{prefix}.bias"),
            vec![fan_out],
            Init::Zeros,
        ));
    }
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, h: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.norm.gamma"),
        vec![h],
        Init::Ones,
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.norm.beta"),
        vec![h],
        Init::Zeros,
    ));
}

pub fn encoder_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let h = cfg.hidden_size;
    let mut out = vec![
        ParamSpec::new(
            "encoder.embeddings.word",
            vec![cfg.vocab_size, h],
            Init::Normal(cfg.init_std),
        ),
        ParamSpec::new(
            "encoder.embeddings.position",
            vec![cfg.max_positions, h],
            Init::Normal(cfg.init_std),
        ),
        ParamSpec::new(
            "encoder.embeddings.segment",
            vec![cfg.num_segments, h],
            Init::Normal(cfg.init_std),
        ),
    ];
    norm(&mut out, "encoder.embeddings", h);
    for l in 0..cfg.num_layers {
        let p = format!("encoder.layer.{l}");
        for proj in ["query", "key", "value", "output"] {
            linear(
                &mut out,
                &format!("{p}.attention.{proj}"),
                h,
                h,
                cfg.init_std,
                true,
            );
        }
        norm(&mut out, &format!("{p}.attention"), h);
        linear(
            &mut out,
            &format!("{p}.ffn.inner"),
            h,
            cfg.ff_size,
            cfg.init_std,
            true,
        );
        linear(
            &mut out,
            &format!("{p}.ffn.outer"),
            cfg.ff_size,
            h,
            cfg.init_std,
            true,
        );
        norm(&mut out, &format!("{p}.ffn"), h);
    }
    out
}

pub fn adapter_layout(cfg: &ModelConfig, task: &str) -> Vec<ParamSpec> {
    let (h, b) = (cfg.hidden_size, cfg.bottleneck());
    let mut out = Vec::new();
    for l in 0..cfg.num_layers {
        let p = format!("adapters.{task}.layer.{l}");
        linear(&mut out, &format!("{p}.down"), h, b, cfg.init_std, true);
        linear(&mut out, &format!("{p}.up"), b, h, ADAPTER_UP_STD, true);
    }
    out
}

pub fn fusion_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let h = cfg.hidden_size;
    let mut out = Vec::new();
    for l in 0..cfg.num_layers {
        for proj in ["query", "key", "value"] {
            linear(
                &mut out,
                &format!("fusion.layer.{l}.{proj}"),
                h,
                h,
                cfg.init_std,
                false,
            );
        }
    }
    out
}

pub fn head_layout(cfg: &ModelConfig, task: &str, num_labels: usize) -> Vec<ParamSpec> {
    let h = cfg.hidden_size;
    let mut out = Vec::new();
    linear(
        &mut out,
        &format!("heads.{task}.linear1"),
        h,
        h,
        cfg.init_std,
        true,
    );
    linear(
        &mut out,
        &format!("heads.{task}.linear2"),
        h,
        num_labels,
        cfg.init_std,
        true,
    );
    out
}

pub fn validate_task_name(task: &str) -> Result<()> {
    if task.is_empty() || task.contains(['.', ' ', '/']) {
        return config_err(format!(
            "task name {task:?} must be non-empty and free of '.', '/' and spaces"
        ));
    }
    Ok(())
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Independent random stream per (seed, label) so groups initialize the
/// same way regardless of creation order.
pub fn group_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

/// Named parameters in insertion order, with freeze flags.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Inserts an existing tensor under `name`. Frozen until a stage says
    /// otherwise.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<usize> {
        let Some(group) = ParamGroup::of(name) else {
            return config_err(format!("parameter name {name:?} has no known group prefix"));
        };
        if self.index.contains_key(name) {
            return config_err(format!("duplicate parameter {name}"));
        }
        let id = self.tensors.len();
        self.tensors.push(tensor.with_requires_grad(false));
        self.names.push(name.to_string());
        self.groups.push(group);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Allocates and initializes every spec. Values are rounded to `f32`
    /// so a checkpoint round trip is lossless.
    pub fn init_layout(&mut self, layout: &[ParamSpec], rng: &mut ChaCha8Rng) -> Result<()> {
        for spec in layout {
            let n = spec.numel();
            let data: Vec<f64> = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(rng) as f32 as f64).collect()
                }
            };
            self.insert(&spec.name, Tensor::new(spec.shape.clone(), data)?)?;
        }
        Ok(())
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        match self.index.get(name) {
            Some(&id) => Ok(id),
            None => config_err(format!("missing parameter {name}")),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&id| &self.tensors[id])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn group(&self, id: usize) -> &ParamGroup {
        &self.groups[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (i, n.as_str(), t))
    }

    pub fn set_trainable_where(&mut self, mut trainable: impl FnMut(&ParamGroup) -> bool) {
        for (t, g) in self.tensors.iter_mut().zip(&self.groups) {
            t.set_requires_grad(trainable(g));
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn count(&self) -> ParamCount {
        self.tensors.iter().fold(ParamCount::default(), |mut c, t| {
            c.total += t.numel();
            if t.requires_grad() {
                c.trainable += t.numel();
            }
            c
        })
    }

    /// SHA-256 over names, shapes and `f32` little-endian values of every
    /// parameter accepted by `select`, in name order.
    pub fn digest(&self, mut select: impl FnMut(&ParamGroup) -> bool) -> String {
        let mut ids: Vec<usize> = (0..self.len())
            .filter(|&i| select(&self.groups[i]))
            .collect();
        ids.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        let mut h = Sha256::new();
        for id in ids {
            h.update(self.names[id].as_bytes());
            for d in self.tensors[id].shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in self.tensors[id].data() {
                h.update((*v as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl ParameterBlocks for ParamStore {
    fn block_count(&self) -> usize {
        self.len()
    }

    fn block_name(&self, index: usize) -> String {
        self.names[index].clone()
    }

    fn block(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    fn block_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }
}
