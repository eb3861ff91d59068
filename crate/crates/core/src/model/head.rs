use super::encoder::Linear;
use super::params::ParamStore;
use crate::error::Result;
use crate::task::TaskSpec;
use crate::tensor::{Tape, Var};

/// Two linear layers with tanh between them, on the [CLS] state.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub task: TaskSpec,
    pub linear1: Linear,
    pub linear2: Linear,
}

impl HeadParams {
    pub fn resolve(store: &ParamStore, task: &TaskSpec) -> Result<Self> {
        let p = format!("heads.{}", task.name);
        Ok(Self {
            task: task.clone(),
            linear1: Linear::resolve(store, &format!("{p}.linear1"), true)?,
            linear2: Linear::resolve(store, &format!("{p}.linear2"), true)?,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.task.kind.num_labels()
    }
}

/// `tanh(cls·W₁ + b₁)·W₂ + b₂` → `[B × num_labels]`.
pub fn head_forward(
    tape: &mut Tape,
    store: &ParamStore,
    head: &HeadParams,
    cls: Var,
) -> Result<Var> {
    let hidden = head.linear1.forward(tape, store, cls)?;
    let hidden = tape.tanh(hidden)?;
    head.linear2.forward(tape, store, hidden)
}
