use super::kernels::gemm;
use super::{numel, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise single-operand functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Sigmoid,
    Tanh,
    Relu,
    /// Tanh approximation.
    Gelu,
    /// Errors on non-positive input.
    Log,
    Exp,
    /// `log σ(x)` evaluated without forming `σ(x)`.
    LogSigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Reshape(Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Stack(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Pick {
        x: Var,
        ids: Vec<usize>,
    },
    NarrowCols {
        x: Var,
        start: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one reverse sweep.
///
/// Nodes are appended in execution order, so replaying indices backwards is
/// a valid topological order and each node is visited once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let len = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, len, inner)
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, contrib: Vec<f64>) {
    if !nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(b, c)| *b += c),
        slot @ None => *slot = Some(contrib),
    }
}

/// Reduces a broadcast gradient back to an operand's shape.
fn reduce_to(contrib: Vec<f64>, operand_len: usize) -> Vec<f64> {
    if contrib.len() == operand_len {
        contrib
    } else {
        vec![contrib.iter().sum()]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Gradient of a leaf after [`Tape::backward`]; `None` when the leaf is
    /// frozen or not connected to the loss.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of every parameter leaf, keyed by parameter index.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.nodes
            .iter()
            .zip(&self.grads)
            .filter_map(|(node, g)| match (&node.op, g) {
                (Op::Param(id), Some(g)) => Some((*id, g.as_slice())),
                _ => None,
            })
    }

    /// Records a copy of `t` as a leaf; gradients flow iff `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a model parameter under `index` so its gradient can be routed
    /// back with [`Tape::param_grads`].
    pub fn param(&mut self, index: usize, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param(index),
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::Length {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let value = self.value(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape, value, Op::Reshape(x), needs))
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let src = self.value(x);
        let value: Vec<f64> = match kind {
            Unary::Neg => src.iter().map(|v| -v).collect(),
            Unary::Sigmoid => src.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Tanh => src.iter().map(|v| v.tanh()).collect(),
            Unary::Relu => src.iter().map(|&v| v.max(0.0)).collect(),
            Unary::Gelu => src.iter().map(|&v| gelu(v)).collect(),
            Unary::Exp => src.iter().map(|v| v.exp()).collect(),
            Unary::LogSigmoid => src.iter().map(|&v| log_sigmoid(v)).collect(),
            Unary::Log => {
                if let Some((index, &value)) = src.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(TensorError::Domain {
                        op: "log",
                        index,
                        value,
                    });
                }
                src.iter().map(|v| v.ln()).collect()
            }
        };
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape, value, Op::Unary(kind, x), needs))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Gelu, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::LogSigmoid, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(shape, value, Op::Scale(x, c), needs)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(shape, value, Op::AddScalar(x), needs)
    }

    /// Output shape for equal-shape or scalar-vs-tensor operands.
    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || self.value(b).len() == 1 {
            Ok(sa.to_vec())
        } else if self.value(a).len() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(TensorError::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn zip_with(&self, a: Var, b: Var, n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        let ia = |i: usize| if va.len() == 1 { va[0] } else { va[i] };
        let ib = |i: usize| if vb.len() == 1 { vb[0] } else { vb[i] };
        (0..n).map(|i| f(ia(i), ib(i))).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("add", a, b)?;
        let value = self.zip_with(a, b, numel(&shape), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("mul", a, b)?;
        let value = self.zip_with(a, b, numel(&shape), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, value, Op::Mul(a, b), needs))
    }

    /// Adds a vector `[n]` to every trailing row of `x [..×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let n = sb[0];
        let b = self.value(bias);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let shape = sx.to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(shape, value, Op::AddBias(x, bias), needs))
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut value,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), needs))
    }

    /// `[N×m×k] · [N×k×n] → [N×m×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::Shape {
                op: "batch_matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut value = vec![0.0; batch * m * n];
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &va[i * m * k..(i + 1) * m * k],
                false,
                &vb[i * k * n..(i + 1) * k * n],
                false,
                &mut value[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![batch, m, n], value, Op::BatchMatMul(a, b), needs))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&a| a < seen.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::Shape {
                op: "permute",
                lhs: shape.to_vec(),
                rhs: axes.to_vec(),
            });
        }
        let (value, out_shape) = permute_data(self.value(x), shape, axes);
        let needs = self.needs(x);
        Ok(self.push(out_shape, value, Op::Permute(x, axes.to_vec()), needs))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[0, 2, 1])
    }

    /// Stacks `T` tensors of shape `[n×h]` into `[n×T×h]`.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(TensorError::Contract("stack of zero tensors".into()));
        };
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 {
            return Err(TensorError::Shape {
                op: "stack_rows",
                lhs: s0,
                rhs: vec![],
            });
        }
        for &x in &xs[1..] {
            if self.shape(x) != s0.as_slice() {
                return Err(TensorError::Shape {
                    op: "stack_rows",
                    lhs: s0,
                    rhs: self.shape(x).to_vec(),
                });
            }
        }
        let (n, h, t) = (s0[0], s0[1], xs.len());
        let mut value = vec![0.0; n * t * h];
        for (ti, &x) in xs.iter().enumerate() {
            let src = self.value(x);
            for i in 0..n {
                value[(i * t + ti) * h..(i * t + ti + 1) * h]
                    .copy_from_slice(&src[i * h..(i + 1) * h]);
            }
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(vec![n, t, h], value, Op::Stack(xs.to_vec()), needs))
    }

    /// Row lookup: `table [V×H]`, ids → `[ids.len()×H]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(TensorError::Shape {
                op: "gather_rows",
                lhs: st.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (rows, h) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Contract(format!(
                "row id {bad} out of range for table with {rows} rows"
            )));
        }
        let src = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            value.extend_from_slice(&src[i * h..(i + 1) * h]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), h],
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Selects one entry per row: `x [B×K]`, ids → `[B]`.
    pub fn pick(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || sx[0] != ids.len() {
            return Err(TensorError::Shape {
                op: "pick",
                lhs: sx.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let k = sx[1];
        if let Some(&bad) = ids.iter().find(|&&i| i >= k) {
            return Err(TensorError::Contract(format!(
                "class id {bad} out of range for {k} columns"
            )));
        }
        let src = self.value(x);
        let value = ids
            .iter()
            .enumerate()
            .map(|(r, &c)| src[r * k + c])
            .collect();
        let needs = self.needs(x);
        Ok(self.push(
            vec![ids.len()],
            value,
            Op::Pick {
                x,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Column slice `x[:, start..start+len]` of a rank-2 tensor.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || len == 0 || start + len > sx[1] {
            return Err(TensorError::Shape {
                op: "narrow_cols",
                lhs: sx.to_vec(),
                rhs: vec![start, len],
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let src = self.value(x);
        let mut value = Vec::with_capacity(m * len);
        for r in 0..m {
            value.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(vec![m, len], value, Op::NarrowCols { x, start }, needs))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut value = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len)
                    .map(|j| src[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    value[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    value[at(j)] /= sum;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(shape, value, Op::Softmax { x, axis }, needs))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&len) = shape.last() else {
            return Err(TensorError::Contract("log_softmax of a scalar".into()));
        };
        let src = self.value(x);
        let mut value = vec![0.0; src.len()];
        for (row, out) in src.chunks(len).zip(value.chunks_mut(len)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out.iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(shape, value, Op::LogSoftmax(x), needs))
    }

    /// Standardizes the last axis, then scales by `gamma` and shifts by `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let src = self.value(x);
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut value = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                value[r * d + j] = xh * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            shape,
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Vec::new(), vec![m], Op::Mean(x), needs)
    }

    /// Reverse sweep from a single-element `loss`. Gradients accumulate
    /// across shared subexpressions; frozen leaves receive none.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.needs(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, grads, node, g);
        }
        Ok(())
    }
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: Vec<f64>) {
    let val = |v: Var| nodes[v.0].value.as_slice();
    let needs = |v: Var| nodes[v.0].needs_grad;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::Reshape(x) => accumulate(grads, nodes, *x, g),
        Op::Unary(kind, x) => {
            let xv = val(*x);
            let y = &node.value;
            let contrib: Vec<f64> = match kind {
                Unary::Neg => g.iter().map(|v| -v).collect(),
                Unary::Sigmoid => g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect(),
                Unary::Tanh => g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect(),
                Unary::Relu => g
                    .iter()
                    .zip(xv)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                Unary::Gelu => g.iter().zip(xv).map(|(g, &x)| g * gelu_grad(x)).collect(),
                Unary::Log => g.iter().zip(xv).map(|(g, x)| g / x).collect(),
                Unary::Exp => g.iter().zip(y).map(|(g, e)| g * e).collect(),
                Unary::LogSigmoid => g.iter().zip(xv).map(|(g, &x)| g * sigmoid(-x)).collect(),
            };
            accumulate(grads, nodes, *x, contrib);
        }
        Op::Scale(x, c) => accumulate(grads, nodes, *x, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(x) => accumulate(grads, nodes, *x, g),
        Op::Add(a, b) => {
            if needs(*b) {
                accumulate(grads, nodes, *b, reduce_to(g.clone(), val(*b).len()));
            }
            if needs(*a) {
                accumulate(grads, nodes, *a, reduce_to(g, val(*a).len()));
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            if needs(*a) {
                let c = g.iter().enumerate().map(|(i, g)| g * at(vb, i)).collect();
                accumulate(grads, nodes, *a, reduce_to(c, va.len()));
            }
            if needs(*b) {
                let c = g.iter().enumerate().map(|(i, g)| g * at(va, i)).collect();
                accumulate(grads, nodes, *b, reduce_to(c, vb.len()));
            }
        }
        Op::AddBias(x, bias) => {
            if needs(*bias) {
                let n = val(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(b, v)| *b += v);
                }
                accumulate(grads, nodes, *bias, gb);
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, &g, false, val(*b), true, &mut ga, false);
                accumulate(grads, nodes, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, val(*a), true, &g, false, &mut gb, false);
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::BatchMatMul(a, b) => {
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let (va, vb) = (val(*a), val(*b));
            if needs(*a) {
                let mut ga = vec![0.0; batch * m * k];
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &vb[i * k * n..(i + 1) * k * n],
                        true,
                        &mut ga[i * m * k..(i + 1) * m * k],
                        false,
                    );
                }
                accumulate(grads, nodes, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; batch * k * n];
                for i in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        &va[i * m * k..(i + 1) * m * k],
                        true,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &mut gb[i * k * n..(i + 1) * k * n],
                        false,
                    );
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Permute(x, axes) => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            let (gx, _) = permute_data(&g, &node.shape, &inverse);
            accumulate(grads, nodes, *x, gx);
        }
        Op::Stack(xs) => {
            let (n, t, h) = (node.shape[0], node.shape[1], node.shape[2]);
            for (ti, &x) in xs.iter().enumerate() {
                if !needs(x) {
                    continue;
                }
                let mut gx = vec![0.0; n * h];
                for i in 0..n {
                    gx[i * h..(i + 1) * h]
                        .copy_from_slice(&g[(i * t + ti) * h..(i * t + ti + 1) * h]);
                }
                accumulate(grads, nodes, x, gx);
            }
        }
        Op::Gather { table, ids } => {
            let st = &nodes[table.0].shape;
            let h = st[1];
            let mut gt = vec![0.0; st[0] * h];
            for (r, &id) in ids.iter().enumerate() {
                gt[id * h..(id + 1) * h]
                    .iter_mut()
                    .zip(&g[r * h..(r + 1) * h])
                    .for_each(|(a, b)| *a += b);
            }
            accumulate(grads, nodes, *table, gt);
        }
        Op::Pick { x, ids } => {
            let k = nodes[x.0].shape[1];
            let mut gx = vec![0.0; ids.len() * k];
            for (r, &c) in ids.iter().enumerate() {
                gx[r * k + c] = g[r];
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::NarrowCols { x, start } => {
            let sx = &nodes[x.0].shape;
            let (m, n) = (sx[0], sx[1]);
            let len = node.shape[1];
            let mut gx = vec![0.0; m * n];
            for r in 0..m {
                gx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = split_axis(&node.shape, *axis);
            let y = &node.value;
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LogSoftmax(x) => {
            let len = *node.shape.last().unwrap();
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), out) in g
                .chunks(len)
                .zip(node.value.chunks(len))
                .zip(gx.chunks_mut(len))
            {
                let total: f64 = gr.iter().sum();
                for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = gv - yv.exp() * total;
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = *node.shape.last().unwrap();
            let gv = val(*gamma);
            if needs(*gamma) {
                let mut gg = vec![0.0; d];
                for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += gr[j] * xr[j];
                    }
                }
                accumulate(grads, nodes, *gamma, gg);
            }
            if needs(*beta) {
                let mut gb = vec![0.0; d];
                for gr in g.chunks(d) {
                    gb.iter_mut().zip(gr).for_each(|(b, v)| *b += v);
                }
                accumulate(grads, nodes, *beta, gb);
            }
            if needs(*x) {
                let mut gx = vec![0.0; g.len()];
                for (r, ((gr, xr), out)) in g
                    .chunks(d)
                    .zip(xhat.chunks(d))
                    .zip(gx.chunks_mut(d))
                    .enumerate()
                {
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gv[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xr[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gv[j];
                        out[j] = rstd[r] * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
                    }
                }
                accumulate(grads, nodes, *x, gx);
            }
        }
        Op::Sum(x) => {
            let n = val(*x).len();
            accumulate(grads, nodes, *x, vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = val(*x).len();
            accumulate(grads, nodes, *x, vec![g[0] / n as f64; n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Var {
        let t = Tensor::new(shape, data).unwrap().with_requires_grad(true);
        tape.input(&t)
    }

    #[test]
    fn matmul_identity_and_projection() {
        let mut tape = Tape::new();
        let eye = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);

        let p = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = tape.constant(vec![2, 1], vec![5.0, 7.0]).unwrap();
        let y = tape.matmul(p, v).unwrap();
        assert_eq!(tape.value(y), &[5.0, 0.0]);
        assert_eq!(tape.shape(y), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_definitions() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![3], vec![0.0, -3.0, 3.0]).unwrap();
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s)[0], 0.5);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r), &[0.0, 0.0, 3.0]);
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn sigmoid_is_stable_far_from_zero() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![], vec![0.0]);
        let y = tape.tanh(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn softmax_symmetric_and_max_shift_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
        let x = tape.constant(vec![2], vec![1000.0, 0.0]).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y)[0], 1.0);
        assert!(tape.value(y)[1] < 1e-300);
        assert!(tape.softmax(x, 1).is_err());
    }

    #[test]
    fn softmax_along_inner_axis_sums_to_one() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let x = tape.constant(vec![2, 3, 4], data).unwrap();
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y);
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|j| v[o * 12 + j * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_constant_and_standardized_inputs() {
        let mut tape = Tape::new();
        let g = tape.constant(vec![2], vec![1.0, 1.0]).unwrap();
        let b = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let c = tape.constant(vec![1, 2], vec![4.0, 4.0]).unwrap();
        let y = tape.layer_norm(c, g, b, 1e-12).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);
        let s = tape.constant(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let y = tape.layer_norm(s, g, b, 1e-300).unwrap();
        assert_eq!(tape.value(y), &[1.0, -1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn disconnected_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let p = leaf(&mut tape, vec![1], vec![5.0]);
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert!(tape.grad(p).is_none());
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let frozen = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let f = tape.param(0, &frozen);
        let w = leaf(&mut tape, vec![2], vec![3.0, 4.0]);
        let prod = tape.mul(f, w).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert!(tape.grad(f).is_none());
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 2.0]);
        assert_eq!(tape.param_grads().count(), 0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        assert!(matches!(tape.backward(w), Err(TensorError::Contract(_))));
    }

    #[test]
    fn scalar_broadcast_reduces_gradient() {
        let mut tape = Tape::new();
        let s = leaf(&mut tape, vec![], vec![2.0]);
        let x = leaf(&mut tape, vec![3], vec![1.0, 2.0, 3.0]);
        let y = tape.mul(x, s).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(s).unwrap(), &[6.0]);
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn permute_round_trips() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(vec![2, 3, 4], data.clone()).unwrap();
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 2, 3]);
        // y[k][i][j] == x[i][j][k]
        assert_eq!(tape.value(y)[6 + 3 + 2], data[12 + 2 * 4 + 1]);
        let z = tape.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(z), data.as_slice());
        assert!(tape.permute(x, &[0, 0, 1]).is_err());
    }
}
