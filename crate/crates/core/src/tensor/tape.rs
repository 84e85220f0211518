//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Every operation appends a node holding its value and the indices of
//! its inputs, so the node list is topologically ordered by construction.
//! [`Tape::backward`] walks the list once in reverse.
//!
//! Tensors are treated as matrices `[rows x cols]` where `rows = shape[0]`;
//! a 1-D tensor of length `n` is a single column of `n` rows except where an
//! op documents otherwise.

use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Silu,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Softmax { x: Var, causal: bool },
    RmsNorm { x: Var, inv_rms: Vec<f64> },
    Sum(Var),
    Mean(Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    GatherRows { table: Var, ids: Vec<usize> },
    Column { x: Var, col: usize },
    Reshape(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one reverse pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Ordered record of operations for one computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `out[m x n] += a[m x k] * b[k x n]`
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b[n x k]^T`
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k x n] += a[m x k]^T * b[m x n]`
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of visible columns in row `i` under a causal mask that aligns the
/// last row with the last column.
fn causal_width(i: usize, rows: usize, cols: usize) -> usize {
    i + 1 + (cols - rows)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable free input (not tied to a parameter store).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a parameter once per tape; later calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut t = store.tensor(id).clone();
        t.zero_grad();
        let v = self.push(t, Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    /// The parameter a node was registered from, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    pub fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a * b^T` for `a: [m x k]`, `b: [n x k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(shape_err("matmul_bt", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut out = vec![0.0; m * n];
        gemm_nt(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulBt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(contract(format!("transpose needs a matrix, got {:?}", ta.shape())));
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose(a), rg))
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a length-`n` vector to every row of `x: [m x n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(o, b)| *o += b);
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddRow(x, bias), rg))
    }

    /// Scales row `i` of `x: [m x n]` by `c[i]` where `c` has `m` entries.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(c));
        let (m, n) = (tx.rows(), tx.cols());
        if tc.len() != m {
            return Err(shape_err("mul_col", tx, tc));
        }
        let mut out = tx.data().to_vec();
        for (row, &s) in out.chunks_mut(n).zip(tc.data()) {
            row.iter_mut().for_each(|o| *o *= s);
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(&[x, c]);
        Ok(self.push(t, Op::MulCol(x, c), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|v| v * factor).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|v| v + c).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::AddScalar(x), rg)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let tx = self.value(x);
        let out = tx
            .data()
            .iter()
            .map(|&v| match f {
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Sigmoid => sigmoid(v),
                Unary::Tanh => v.tanh(),
                Unary::Silu => v * sigmoid(v),
            })
            .collect();
        let t = Tensor::new(tx.shape(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Unary(x, f), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        self.softmax_impl(x, false).expect("unmasked softmax cannot fail")
    }

    /// Row-wise softmax where row `i` only sees the first
    /// `i + 1 + (cols - rows)` columns; masked entries are exactly zero.
    pub fn causal_softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        if causal && m > n {
            return Err(contract(format!("causal softmax needs rows <= cols, got {m}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let w = if causal { causal_width(i, m, n) } else { n };
            let row = &tx.data()[i * n..i * n + w];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * n..i * n + w];
            let mut sum = 0.0;
            for (dst, &v) in o.iter_mut().zip(row) {
                *dst = (v - max).exp();
                sum += *dst;
            }
            o.iter_mut().for_each(|v| *v /= sum);
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax { x, causal }, rg))
    }

    /// Divides each row by its root-mean-square (no learned gain).
    pub fn rms_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut out = tx.data().to_vec();
        let mut inv = Vec::with_capacity(tx.rows());
        for row in out.chunks_mut(n) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let r = 1.0 / (ms + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= r);
            inv.push(r);
        }
        let t = Tensor::new(tx.shape(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::RmsNorm { x, inv_rms: inv }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f64>() / tx.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat_rows of nothing"))?;
        let n = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != n {
                return Err(shape_err("concat_rows", self.value(first), tp));
            }
            rows += tp.rows();
            out.extend_from_slice(tp.data());
        }
        let t = Tensor::new(&[rows, n], out)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if len == 0 || start + len > tx.rows() {
            return Err(Error::Index {
                what: "row slice end",
                index: start + len,
                len: tx.rows(),
            });
        }
        let n = tx.cols();
        let t = Tensor::new(&[len, n], tx.data()[start * n..(start + len) * n].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    /// Row lookup (embedding gather).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, n) = (tt.rows(), tt.cols());
        if ids.is_empty() {
            return Err(contract("gather_rows with no ids"));
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "gather row",
                    index: id,
                    len: v,
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(&[ids.len(), n], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(t, Op::GatherRows { table, ids: ids.to_vec() }, rg))
    }

    /// Column `col` of `x: [m x n]` as an `[m x 1]` matrix.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        if col >= n {
            return Err(Error::Index {
                what: "column",
                index: col,
                len: n,
            });
        }
        let out = (0..m).map(|i| tx.data()[i * n + col]).collect();
        let t = Tensor::new(&[m, 1], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Column { x, col }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Mean token cross-entropy of `logits: [L x V]` over positions whose
    /// target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let tl = self.value(logits);
        let (l, v) = (tl.rows(), tl.cols());
        if targets.len() != l {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::UndefinedLoss("every position is ignored".into()));
        }
        let mut probs = vec![0.0; l * v];
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let row = tl.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            for (p, z) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
            if let Some(t) = *t {
                if t >= v {
                    return Err(Error::Index {
                        what: "target class",
                        index: t,
                        len: v,
                    });
                }
                total += lse - row[t];
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy on logits, `max(z,0) - z t + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.len() != targets.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let total: f64 = tl
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / targets.len() as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(contract(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |buf| gemm_nt(g, tb.data(), buf, m, n, k));
                acc(*b, &mut |buf| gemm_tn(ta.data(), g, buf, m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                acc(*a, &mut |buf| gemm_nn(g, tb.data(), buf, m, n, k));
                acc(*b, &mut |buf| gemm_tn(g, ta.data(), buf, m, n, k));
            }
            Op::Transpose(a) => {
                let (m, n) = (out.shape()[0], out.shape()[1]);
                acc(*a, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j * m + i] += g[i * n + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * tb[i];
                    }
                });
                acc(*b, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * ta[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] / tb[i];
                    }
                });
                acc(*b, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] -= g[i] * ta[i] / (tb[i] * tb[i]);
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let n = out.cols();
                acc(*x, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                acc(*bias, &mut |buf| {
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::MulCol(x, c) => {
                let n = out.cols();
                let (tx, tc) = (nodes[x.0].value.data(), nodes[c.0].value.data());
                acc(*x, &mut |buf| {
                    for (i, s) in tc.iter().enumerate() {
                        for j in 0..n {
                            buf[i * n + j] += g[i * n + j] * s;
                        }
                    }
                });
                acc(*c, &mut |buf| {
                    for (i, d) in buf.iter_mut().enumerate() {
                        let row = i * n..(i + 1) * n;
                        *d += g[row.clone()].iter().zip(&tx[row]).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Scale(x, f) => {
                acc(*x, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, v)| *d += v * f));
            }
            Op::AddScalar(x) => {
                acc(*x, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            }
            Op::Unary(x, f) => {
                let tx = nodes[x.0].value.data();
                let y = out.data();
                acc(*x, &mut |buf| {
                    for i in 0..buf.len() {
                        let local = match f {
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / tx[i],
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Silu => {
                                let s = sigmoid(tx[i]);
                                s + tx[i] * s * (1.0 - s)
                            }
                        };
                        buf[i] += g[i] * local;
                    }
                });
            }
            Op::Softmax { x, causal } => {
                let (m, n) = (out.rows(), out.cols());
                let y = out.data();
                acc(*x, &mut |buf| {
                    for i in 0..m {
                        let w = if *causal { causal_width(i, m, n) } else { n };
                        let r = i * n..i * n + w;
                        let dot: f64 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            buf[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::RmsNorm { x, inv_rms } => {
                let n = out.cols();
                let tx = nodes[x.0].value.data();
                acc(*x, &mut |buf| {
                    for (i, &r) in inv_rms.iter().enumerate() {
                        let row = i * n..(i + 1) * n;
                        let dot: f64 = g[row.clone()].iter().zip(&tx[row.clone()]).map(|(a, b)| a * b).sum();
                        let c = r * r * r * dot / n as f64;
                        for j in row {
                            buf[j] += r * g[j] - c * tx[j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    let slice = &g[offset..offset + len];
                    acc(*p, &mut |buf| buf.iter_mut().zip(slice).for_each(|(d, v)| *d += v));
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let n = out.cols();
                acc(*x, &mut |buf| {
                    buf[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, v)| *d += v)
                });
            }
            Op::GatherRows { table, ids } => {
                let n = out.cols();
                acc(*table, &mut |buf| {
                    for (r, &id) in ids.iter().enumerate() {
                        buf[id * n..(id + 1) * n]
                            .iter_mut()
                            .zip(&g[r * n..(r + 1) * n])
                            .for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::Column { x, col } => {
                let n = nodes[x.0].value.cols();
                acc(*x, &mut |buf| {
                    for (i, v) in g.iter().enumerate() {
                        buf[i * n + col] += v;
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let v = nodes[logits.0].value.cols();
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |buf| {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..v {
                            buf[i * v + j] += scale * probs[i * v + j];
                        }
                        buf[i * v + t] -= scale;
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let z = nodes[logits.0].value.data();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += scale * (sigmoid(z[i]) - targets[i]);
                    }
                });
            }
        }
    }

    /// Adds the gradients of every parameter node into its store entry.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        let mut entries: Vec<_> = self.params.iter().collect();
        entries.sort();
        for (&id, &v) in entries {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).tensor.accumulate_grad(g);
            }
        }
    }
}
