//! Bottleneck adapters and the attention layer that fuses them.

use super::config::ModelConfig;
use super::encoder::Linear;
use super::params::ParamStore;
use crate::error::Result;
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct AdapterLayer {
    pub down: Linear,
    pub up: Linear,
}

#[derive(Debug, Clone)]
pub struct AdapterParams {
    pub task: String,
    pub layers: Vec<AdapterLayer>,
}

impl AdapterParams {
    pub fn resolve(store: &ParamStore, cfg: &ModelConfig, task: &str) -> Result<Self> {
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("adapters.{task}.layer.{l}");
                Ok(AdapterLayer {
                    down: Linear::resolve(store, &format!("{p}.down"), true)?,
                    up: Linear::resolve(store, &format!("{p}.up"), true)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            task: task.to_string(),
            layers,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    /// Adapters fused, in the order their outputs enter the attention.
    pub tasks: Vec<String>,
    pub layers: Vec<FusionLayer>,
}

impl FusionParams {
    pub fn resolve(store: &ParamStore, cfg: &ModelConfig, tasks: &[String]) -> Result<Self> {
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("fusion.layer.{l}");
                Ok(FusionLayer {
                    query: Linear::resolve(store, &format!("{p}.query"), false)?,
                    key: Linear::resolve(store, &format!("{p}.key"), false)?,
                    value: Linear::resolve(store, &format!("{p}.value"), false)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tasks: tasks.to_vec(),
            layers,
        })
    }
}

/// What runs after each layer's feed-forward block.
#[derive(Debug, Clone)]
pub enum Slot<'a> {
    None,
    Single(&'a AdapterParams),
    Fusion {
        adapters: Vec<&'a AdapterParams>,
        fusion: &'a FusionParams,
    },
}

/// `h + up(relu(down(h)))` on `h [n×H]`.
pub fn adapter_forward(
    tape: &mut Tape,
    store: &ParamStore,
    adapter: &AdapterParams,
    layer_idx: usize,
    h: Var,
) -> Result<Var> {
    let layer = &adapter.layers[layer_idx];
    let u = layer.down.forward(tape, store, h)?;
    let u = tape.relu(u)?;
    let a = layer.up.forward(tape, store, u)?;
    Ok(tape.add(h, a)?)
}

/// Per position: query from `h`, keys and values from each adapter output,
/// softmax over adapters, weighted values plus `h`. Returns the output
/// `[n×H]` and the weights `[n×1×T]`.
pub fn fusion_forward(
    tape: &mut Tape,
    store: &ParamStore,
    fusion: &FusionParams,
    layer_idx: usize,
    h: Var,
    adapter_outputs: &[Var],
) -> Result<(Var, Var)> {
    if adapter_outputs.is_empty() {
        return Err(TensorError::Contract("fusion over zero adapters".into()).into());
    }
    let layer = &fusion.layers[layer_idx];
    let (n, hidden) = {
        let s = tape.shape(h);
        (s[0], s[1])
    };
    let t = adapter_outputs.len();
    let q = layer.query.forward(tape, store, h)?;
    let mut keys = Vec::with_capacity(t);
    let mut values = Vec::with_capacity(t);
    for &a in adapter_outputs {
        keys.push(layer.key.forward(tape, store, a)?);
        values.push(layer.value.forward(tape, store, a)?);
    }
    let k = tape.stack_rows(&keys)?;
    let v = tape.stack_rows(&values)?;
    let q = tape.reshape(q, vec![n, 1, hidden])?;
    let kt = tape.transpose_last2(k)?;
    let scores = tape.batch_matmul(q, kt)?;
    let weights = tape.softmax(scores, 2)?;
    let mixed = tape.batch_matmul(weights, v)?;
    let mixed = tape.reshape(mixed, vec![n, hidden])?;
    let out = tape.add(mixed, h)?;
    Ok((out, weights))
}

pub(crate) fn apply_slot(
    tape: &mut Tape,
    store: &ParamStore,
    slot: &Slot<'_>,
    layer_idx: usize,
    h: Var,
) -> Result<(Var, Option<Var>)> {
    match slot {
        Slot::None => Ok((h, None)),
        Slot::Single(adapter) => Ok((adapter_forward(tape, store, adapter, layer_idx, h)?, None)),
        Slot::Fusion { adapters, fusion } => {
            let outputs = adapters
                .iter()
                .map(|a| adapter_forward(tape, store, a, layer_idx, h))
                .collect::<Result<Vec<_>>>()?;
            let (out, w) = fusion_forward(tape, store, fusion, layer_idx, h, &outputs)?;
            Ok((out, Some(w)))
        }
    }
}
