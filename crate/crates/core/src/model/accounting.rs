use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{
    adapter_layout, encoder_layout, fusion_layout, head_layout, ParamCount, ParamSpec,
};
use super::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccountingMode {
    /// Encoder and head, everything trainable.
    FineTune,
    /// Encoder, one adapter and head; adapter and head trainable.
    SingleAdapter,
    /// Encoder, `n` adapters, fusion layers and head; fusion and head
    /// trainable.
    Fusion(usize),
}

/// Counts parameters by enumerating the layout of the configured model;
/// nothing is allocated.
pub fn count_parameters(cfg: &ModelConfig, mode: AccountingMode, num_labels: usize) -> ParamCount {
    const TARGET: &str = "target";
    let mut layout: Vec<ParamSpec> = encoder_layout(cfg);
    let stage = match mode {
        AccountingMode::FineTune => Stage::Full,
        AccountingMode::SingleAdapter => {
            layout.extend(adapter_layout(cfg, TARGET));
            Stage::AdapterTraining(TARGET.into())
        }
        AccountingMode::Fusion(n) => {
            layout.extend(adapter_layout(cfg, TARGET));
            for i in 1..n {
                layout.extend(adapter_layout(cfg, &format!("aux{i}")));
            }
            layout.extend(fusion_layout(cfg));
            Stage::FusionTraining(TARGET.into())
        }
    };
    layout.extend(head_layout(cfg, TARGET, num_labels));
    layout.iter().fold(ParamCount::default(), |mut c, spec| {
        c.total += spec.numel();
        if stage.trainable(&spec.group()) {
            c.trainable += spec.numel();
        }
        c
    })
}
