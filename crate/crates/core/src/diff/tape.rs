//! Reverse-mode differentiation over an append-only tape.
//!
//! Every forward op evaluates eagerly, stores its output on the tape and
//! returns a [`Var`] handle. [`Tape::backward`] walks the recorded nodes in
//! reverse order exactly once.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Relu(usize),
    Scale(usize, f64),
    Clamp(usize, f64, f64),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        end: usize,
    },
    Softmax(usize),
    LogSoftmax(usize),
    Transpose(usize),
    Reshape(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Neg(a)
            | Exp(a)
            | Log(a)
            | Sqrt(a)
            | Square(a)
            | Relu(a)
            | Scale(a, _)
            | Clamp(a, _, _)
            | SumAxis(a, _)
            | MeanAxis(a, _)
            | SumAll(a)
            | MeanAll(a)
            | Softmax(a)
            | LogSoftmax(a)
            | Transpose(a)
            | Reshape(a) => vec![*a],
            Slice { input, .. } => vec![*input],
            Concat(parts, _) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when no path exists.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::ForeignVar { index: v.index });
        }
        Ok(self.grads[v.index]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.index])))
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || a.ends_with(b) {
        Ok(a.to_vec())
    } else if b.ends_with(a) {
        Ok(b.to_vec())
    } else {
        Err(Error::shape(op, a, b))
    }
}

/// Sums a broadcast gradient back down to an operand of `len` elements.
fn fold(g: &[f64], len: usize) -> Vec<f64> {
    if g.len() == len {
        return g.to_vec();
    }
    let mut out = vec![0.0; len];
    for chunk in g.chunks(len) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar { index: v.index });
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Copies `v` into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v)?.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        make: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let shape = broadcast_shape(name, ta.shape(), tb.shape())?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let (la, lb) = (da.len(), db.len());
        let data = (0..n).map(|i| f(da[i % la], db[i % lb])).collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, make(ia, ib)))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(f);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b)?.data().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, Op::Div, |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Neg(i), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Exp(i), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        if let Some(bad) = self.nodes[i]
            .value
            .data()
            .iter()
            .find(|&&v| v <= 0.0 || v.is_nan())
        {
            return Err(Error::Domain {
                op: "log",
                detail: format!("input {bad} is not strictly positive"),
            });
        }
        self.unary(a, Op::Log(i), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        if let Some(bad) = self.nodes[i]
            .value
            .data()
            .iter()
            .find(|&&v| v <= 0.0 || v.is_nan())
        {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("input {bad} is not strictly positive"),
            });
        }
        self.unary(a, Op::Sqrt(i), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Square(i), |x| x * x)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Relu(i), |x| x.max(0.0))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Scale(i, c), |x| x * c)
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Clamp(i, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Matrix product over the trailing two axes. `b` is either 2-D (shared
    /// across the batch) or has the same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        if k != k2 || !(batch_b.is_empty() || batch_a == batch_b) {
            return Err(Error::shape("matmul", sa, sb));
        }
        let batch: usize = batch_a.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let shared = batch_b.is_empty();
        for bi in 0..batch {
            let a_blk = &ta.data()[bi * m * k..(bi + 1) * m * k];
            let b_blk = if shared {
                tb.data()
            } else {
                &tb.data()[bi * k * n..(bi + 1) * k * n]
            };
            gemm_acc(
                a_blk,
                b_blk,
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch_a.to_vec();
        shape.extend([m, n]);
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = reduce_axis(&self.nodes[ia].value, axis, "sum_axis", 1.0)?;
        Ok(self.push(out, Op::SumAxis(ia, axis)))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        let n = *t
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", t.shape(), &[axis]))?;
        if n == 0 {
            return Err(Error::shape("mean_axis", t.shape(), &[axis]));
        }
        let out = reduce_axis(t, axis, "mean_axis", 1.0 / n as f64)?;
        Ok(self.push(out, Op::MeanAxis(ia, axis)))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.sum();
        Ok(self.push(Tensor::scalar(s), Op::SumAll(ia)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        if t.is_empty() {
            return Err(Error::shape("mean", t.shape(), &[]));
        }
        let m = t.sum() / t.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::MeanAll(ia)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = idx
            .first()
            .map(|&i| self.nodes[i].value.shape().to_vec())
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let t = &self.nodes[i].value;
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat(idx, axis)))
    }

    /// Entries `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        let shape = t.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::shape("slice", shape, &[axis, start, end]));
        }
        let (outer, len, inner) = split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            out,
            Op::Slice {
                input: ia,
                axis,
                start,
                end,
            },
        ))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = row_softmax(&self.nodes[ia].value, "softmax", false)?;
        Ok(self.push(out, Op::Softmax(ia)))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = row_softmax(&self.nodes[ia].value, "log_softmax", true)?;
        Ok(self.push(out, Op::LogSoftmax(ia)))
    }

    /// Swaps the trailing two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.transpose()?;
        Ok(self.push(out, Op::Transpose(ia)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ia)))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        let loss_shape = self.nodes[root].value.shape();
        if !loss_shape.is_empty() {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::scalar(1.0));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let val = |i: usize| &self.nodes[i].value;
        let mut send = |i: usize, data: Vec<f64>| {
            if !self.nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(&data) {
                        *a += d;
                    }
                }
                slot @ None => {
                    *slot = Some(
                        Tensor::new(self.nodes[i].value.shape(), data).expect("gradient shape"),
                    );
                }
            }
        };
        let wants = |i: usize| self.nodes[i].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if wants(*a) {
                    send(*a, fold(gd, val(*a).len()));
                }
                if wants(*b) {
                    send(
                        *b,
                        fold(gd, val(*b).len())
                            .into_iter()
                            .map(|v| sign * v)
                            .collect(),
                    );
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                let (la, lb) = (da.len(), db.len());
                if wants(*a) {
                    let full: Vec<f64> =
                        gd.iter().enumerate().map(|(k, g)| g * db[k % lb]).collect();
                    send(*a, fold(&full, la));
                }
                if wants(*b) {
                    let full: Vec<f64> =
                        gd.iter().enumerate().map(|(k, g)| g * da[k % la]).collect();
                    send(*b, fold(&full, lb));
                }
            }
            Op::Div(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                let (la, lb) = (da.len(), db.len());
                if wants(*a) {
                    let full: Vec<f64> =
                        gd.iter().enumerate().map(|(k, g)| g / db[k % lb]).collect();
                    send(*a, fold(&full, la));
                }
                if wants(*b) {
                    let full: Vec<f64> = gd
                        .iter()
                        .enumerate()
                        .map(|(k, g)| {
                            let y = db[k % lb];
                            -g * da[k % la] / (y * y)
                        })
                        .collect();
                    send(*b, fold(&full, lb));
                }
            }
            Op::Neg(a) => send(*a, gd.iter().map(|g| -g).collect()),
            Op::Exp(a) => send(
                *a,
                gd.iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y)
                    .collect(),
            ),
            Op::Log(a) => send(
                *a,
                gd.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect(),
            ),
            Op::Sqrt(a) => send(
                *a,
                gd.iter()
                    .zip(node.value.data())
                    .map(|(g, y)| 0.5 * g / y)
                    .collect(),
            ),
            Op::Square(a) => send(
                *a,
                gd.iter()
                    .zip(val(*a).data())
                    .map(|(g, x)| 2.0 * g * x)
                    .collect(),
            ),
            Op::Relu(a) => send(
                *a,
                gd.iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Scale(a, c) => send(*a, gd.iter().map(|g| g * c).collect()),
            Op::Clamp(a, lo, hi) => send(
                *a,
                gd.iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect(),
            ),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (sa, sb) = (ta.shape(), tb.shape());
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch = ta.len() / (m * k).max(1);
                let shared = sb.len() == 2;
                if wants(*a) {
                    let mut ga = vec![0.0; ta.len()];
                    for bi in 0..batch {
                        let b_blk = if shared {
                            tb.data()
                        } else {
                            &tb.data()[bi * k * n..(bi + 1) * k * n]
                        };
                        gemm_nt_acc(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            b_blk,
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    send(*a, ga);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; tb.len()];
                    for bi in 0..batch {
                        let out = if shared {
                            &mut gb[..]
                        } else {
                            &mut gb[bi * k * n..(bi + 1) * k * n]
                        };
                        gemm_tn_acc(
                            &ta.data()[bi * m * k..(bi + 1) * m * k],
                            &gd[bi * m * n..(bi + 1) * m * n],
                            out,
                            m,
                            k,
                            n,
                        );
                    }
                    send(*b, gb);
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = val(*a).shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let c = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            ga[(o * len + l) * inner + i] = c * gd[o * inner + i];
                        }
                    }
                }
                send(*a, ga);
            }
            Op::SumAll(a) => send(*a, vec![gd[0]; val(*a).len()]),
            Op::MeanAll(a) => {
                let n = val(*a).len();
                send(*a, vec![gd[0] / n as f64; n]);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[*axis];
                    if wants(p) {
                        let mut gp = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&gd[base..base + w * inner]);
                        }
                        send(p, gp);
                    }
                    offset += w;
                }
            }
            Op::Slice {
                input,
                axis,
                start,
                end,
            } => {
                let (outer, len, inner) = split_axis(val(*input).shape(), *axis);
                let w = (end - start) * inner;
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    ga[base..base + w].copy_from_slice(&gd[o * w..(o + 1) * w]);
                }
                send(*input, ga);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), out) in gd.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                        *o = y * (g - dot);
                    }
                }
                send(*a, ga);
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), out) in gd.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, g), ly) in out.iter_mut().zip(gr).zip(yr) {
                        *o = g - ly.exp() * total;
                    }
                }
                send(*a, ga);
            }
            Op::Transpose(a) => send(
                *a,
                g.transpose().expect("rank checked on forward").into_data(),
            ),
            Op::Reshape(a) => send(*a, gd.to_vec()),
        }
    }
}

fn reduce_axis(t: &Tensor, axis: usize, op: &'static str, c: f64) -> Result<Tensor> {
    let shape = t.shape();
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, &[axis]));
    }
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let src = &t.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    if c != 1.0 {
        out.iter_mut().for_each(|v| *v *= c);
    }
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Tensor::new(&out_shape, out)
}

fn row_softmax(t: &Tensor, op: &'static str, log: bool) -> Result<Tensor> {
    let cols = match t.shape().last() {
        Some(&c) if c > 0 => c,
        _ => return Err(Error::shape(op, t.shape(), &[])),
    };
    let mut out = vec![0.0; t.len()];
    for (src, dst) in t.data().chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = src.iter().map(|v| (v - max).exp()).sum();
        if log {
            let lse = max + total.ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        } else {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp() / total;
            }
        }
    }
    Tensor::new(t.shape(), out)
}
