//! Whole-model gradient verification: analytic gradients of a fusion model
//! with two adapters and an emotion head against central differences,
//! summarized per architectural block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Batch, BatchLabels, CLS, NUM_SPECIALS, PAD, SEP};
use crate::error::Result;
use crate::loss::{weighted_bce, PosWeights, Reduction};
use crate::model::{Model, ModelConfig, ParamStore, SlotMode, Stage};
use crate::task::{TaskKind, TaskSpec};
use crate::tensor::{finite_difference_check, BlockReport, FdOptions, Tape};

/// Reported blocks, in order.
pub const BLOCKS: [&str; 6] = [
    "embeddings",
    "attention",
    "feed-forward",
    "adapter",
    "fusion",
    "head",
];

const ADAPTERS: [&str; 2] = ["first", "second"];
const TARGET: &str = "target";

/// Block of a parameter name.
pub fn block_of(name: &str) -> &'static str {
    if name.starts_with("encoder.embeddings.") {
        "embeddings"
    } else if name.contains(".attention.") {
        "attention"
    } else if name.contains(".ffn.") {
        "feed-forward"
    } else if name.starts_with("adapters.") {
        "adapter"
    } else if name.starts_with("fusion.") {
        "fusion"
    } else {
        "head"
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub fd: FdOptions,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Test hook: perturbs the analytic gradient of one head tensor so the
    /// check must fail.
    pub corrupt_gradient: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            fd: FdOptions {
                max_coords: Some(12),
                ..FdOptions::default()
            },
            batch_size: 3,
            seq_len: 7,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockSummary {
    pub block: String,
    pub tensors: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub h: f64,
    pub loss: f64,
    pub blocks: Vec<BlockSummary>,
    pub params: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }
}

fn random_batch(vocab_size: usize, b: usize, l: usize, rng: &mut ChaCha8Rng) -> Batch {
    let mut token_ids = Vec::with_capacity(b * l);
    let mut attention_mask = Vec::with_capacity(b * l);
    for row in 0..b {
        // Row 0 fills the sequence; the others leave padding to exercise masking.
        let real = if row == 0 { l } else { rng.random_range(2..=l) };
        for j in 0..l {
            let id = match j {
                0 => CLS,
                j if j + 1 == real => SEP,
                j if j < real => rng.random_range(NUM_SPECIALS..vocab_size),
                _ => PAD,
            };
            token_ids.push(id);
            attention_mask.push(u8::from(j < real));
        }
    }
    let values = (0..b * 6)
        .map(|_| f64::from(rng.random_bool(0.4)))
        .collect();
    Batch {
        batch_size: b,
        seq_len: l,
        segment_ids: vec![0; b * l],
        token_ids,
        attention_mask,
        labels: BatchLabels::MultiHot { classes: 6, values },
    }
}

fn loss_of(
    model: &Model,
    store: &ParamStore,
    batch: &Batch,
    w: &PosWeights,
    tape: &mut Tape,
) -> Result<crate::tensor::Var> {
    let out = model.forward_with(store, tape, batch, TARGET)?;
    let BatchLabels::MultiHot { values, .. } = &batch.labels else {
        unreachable!("random_batch builds multi-hot labels")
    };
    weighted_bce(tape, out.logits, values, w, Reduction::BatchMean)
}

/// Checks every parameter of a fusion model built from `cfg` (everything
/// trainable) on a random padded batch with random positive weights.
pub fn grad_check(cfg: &ModelConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.fd.seed);
    let mut model = Model::new(cfg.clone(), opts.fd.seed)?;
    let tasks: Vec<String> = ADAPTERS.iter().map(|s| s.to_string()).collect();
    for (i, t) in tasks.iter().enumerate() {
        model.add_adapter(t, opts.fd.seed + 1 + i as u64)?;
    }
    model.add_fusion(&tasks, opts.fd.seed + 10)?;
    model.add_head(&TaskSpec::new(TARGET, TaskKind::Emotion), opts.fd.seed + 11)?;
    model.attach(SlotMode::Fusion(tasks))?;
    model.set_stage(&Stage::Full);
    // Freshly initialized up-projections are ~1e-4, which would leave the
    // adapter down-projections with vanishing gradients; widen them so the
    // check sees non-trivial values.
    let ids: Vec<usize> = model
        .params()
        .iter()
        .filter(|(_, n, _)| n.contains(".up."))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }

    let batch = random_batch(
        cfg.vocab_size,
        opts.batch_size,
        opts.seq_len.min(cfg.max_positions),
        &mut rng,
    );
    let w = PosWeights((0..6).map(|_| rng.random_range(0.5..3.0)).collect());

    let mut tape = Tape::new();
    let loss = loss_of(&model, model.params(), &batch, &w, &mut tape)?;
    let loss_value = tape.scalar(loss);
    tape.backward(loss)?;
    model.params_mut().zero_grads();
    model.collect_grads(&tape)?;

    let mut store = model.params().clone();
    if opts.corrupt_gradient {
        let id = store.id(&format!("heads.{TARGET}.linear2.bias"))?;
        let t = store.get_mut(id);
        let g: Vec<f64> = t
            .grad()
            .expect("head bias has a gradient")
            .iter()
            .map(|g| 2.0 * g + 0.1)
            .collect();
        t.set_grad(Some(g));
    }
    let mut failure = None;
    let fd = finite_difference_check(
        &mut store,
        |s: &ParamStore| {
            let mut tape = Tape::new();
            match loss_of(&model, s, &batch, &w, &mut tape) {
                Ok(v) => tape.scalar(v),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &opts.fd,
    );
    if let Some(e) = failure {
        return Err(e);
    }

    let blocks = BLOCKS
        .iter()
        .map(|&block| {
            let members: Vec<&BlockReport> = fd
                .blocks
                .iter()
                .filter(|r| block_of(&r.name) == block)
                .collect();
            let worst = members
                .iter()
                .copied()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
            BlockSummary {
                block: block.to_string(),
                tensors: members.len(),
                coords_checked: members.iter().map(|r| r.coords_checked).sum(),
                max_rel_err: worst.map_or(0.0, |r| r.max_rel_err),
                worst_param: worst.map_or_else(String::new, |r| r.name.clone()),
                worst_coord: worst.map_or(0, |r| r.worst_coord),
                analytic: worst.map_or(0.0, |r| r.analytic),
                numeric: worst.map_or(0.0, |r| r.numeric),
                passed: !members.is_empty() && members.iter().all(|r| r.passed),
            }
        })
        .collect();
    Ok(GradCheckReport {
        tol: opts.fd.tol,
        h: opts.fd.h,
        loss: loss_value,
        blocks,
        params: fd.blocks,
    })
}
