use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Tensor;

/// Named, mutable access to the tensors a scalar function depends on.
pub trait ParameterBlocks {
    fn block_count(&self) -> usize;
    fn block_name(&self, index: usize) -> String;
    fn block(&self, index: usize) -> &Tensor;
    fn block_mut(&mut self, index: usize) -> &mut Tensor;
}

impl ParameterBlocks for [Tensor] {
    fn block_count(&self) -> usize {
        self.len()
    }

    fn block_name(&self, index: usize) -> String {
        format!("param{index}")
    }

    fn block(&self, index: usize) -> &Tensor {
        &self[index]
    }

    fn block_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self[index]
    }
}

impl ParameterBlocks for Vec<Tensor> {
    fn block_count(&self) -> usize {
        self.len()
    }

    fn block_name(&self, index: usize) -> String {
        format!("param{index}")
    }

    fn block(&self, index: usize) -> &Tensor {
        &self[index]
    }

    fn block_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self[index]
    }
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub h: f64,
    pub tol: f64,
    /// Upper bound on coordinates probed per block; `None` probes all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn worst(&self) -> Option<&BlockReport> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// `(f(p + h) − f(p − h)) / 2h` along one coordinate. The coordinate is
/// restored exactly afterwards.
pub fn central_difference<P, F>(
    params: &mut P,
    f: &mut F,
    block: usize,
    coord: usize,
    h: f64,
) -> f64
where
    P: ParameterBlocks + ?Sized,
    F: FnMut(&P) -> f64,
{
    let original = params.block(block).data()[coord];
    params.block_mut(block).data_mut()[coord] = original + h;
    let plus = f(params);
    params.block_mut(block).data_mut()[coord] = original - h;
    let minus = f(params);
    params.block_mut(block).data_mut()[coord] = original;
    (plus - minus) / (2.0 * h)
}

fn pick_coords(grad: &[f64], limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = grad.len();
    let Some(limit) = limit.filter(|&m| m < n) else {
        return (0..n).collect();
    };
    // Half the probes go to coordinates the analytic pass says are live.
    let live: Vec<usize> = (0..n).filter(|&i| grad[i] != 0.0).collect();
    let mut coords: Vec<usize> = sample(rng, live.len(), (limit / 2).min(live.len()))
        .into_iter()
        .map(|i| live[i])
        .collect();
    for i in sample(rng, n, limit) {
        if coords.len() >= limit {
            break;
        }
        if !coords.contains(&i) {
            coords.push(i);
        }
    }
    coords.sort_unstable();
    coords
}

/// Compares the gradients stored on every trainable block against central
/// differences of `f`. Call after a backward pass has populated the grads.
pub fn finite_difference_check<P, F>(params: &mut P, mut f: F, opts: &FdOptions) -> FdReport
where
    P: ParameterBlocks + ?Sized,
    F: FnMut(&P) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut blocks = Vec::new();
    for b in 0..params.block_count() {
        let tensor = params.block(b);
        if !tensor.requires_grad() {
            continue;
        }
        let analytic: Vec<f64> = match tensor.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; tensor.numel()],
        };
        let coords = pick_coords(&analytic, opts.max_coords, &mut rng);
        let mut report = BlockReport {
            name: params.block_name(b),
            coords_checked: coords.len(),
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &c in &coords {
            let numeric = central_difference(params, &mut f, b, c, opts.h);
            let err = relative_error(analytic[c], numeric);
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst_coord = c;
                report.analytic = analytic[c];
                report.numeric = numeric;
            }
        }
        report.passed = report.max_rel_err < opts.tol;
        blocks.push(report);
    }
    FdReport {
        tol: opts.tol,
        blocks,
    }
}
