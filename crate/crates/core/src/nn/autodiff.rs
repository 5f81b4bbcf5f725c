//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the tape; [`Tape::backward`] walks the tape in reverse
//! and accumulates gradients only for nodes that depend on a parameter leaf.

use std::borrow::Cow;

use super::tensor::{gemm_into, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    MeanRows(Var),
    Sum(Var),
    Scale(Var, f64),
    /// Stores the softmax probabilities computed in the forward pass.
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf; its gradient is reported by `backward`.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Trainable leaves in recording order.
    pub fn parameter_vars(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.needs_grad && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err!("add of {:?} and {:?}", x.shape(), y.shape()));
        }
        let mut out = x.clone();
        out.axpy(1.0, y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), needs))
    }

    /// Adds a `1 x n` row to every row of an `m x n` value.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err!("add_row of {:?} and {:?}", x.shape(), r.shape()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Cow::Owned(out), Op::AddRow(a, row), needs))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err!("mul of {:?} and {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(Cow::Owned(out), Op::Relu(a), needs)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).map(|v| v * alpha);
        let needs = self.needs(a);
        self.push(Cow::Owned(out), Op::Scale(a, alpha), needs)
    }

    /// Column means of an `m x n` value, as `1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("mean over zero rows".into()));
        }
        let mut out = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / x.rows() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let needs = self.needs(a);
        Ok(self.push(Cow::Owned(Tensor::row_vector(out)), Op::MeanRows(a), needs))
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Cow::Owned(Tensor::filled(1, 1, s)), Op::Sum(a), needs)
    }

    /// `-log softmax(logits)[label]` for a `1 x C` logit row, as `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(shape_err!("cross_entropy expects one logit row, got {:?}", z.shape()));
        }
        if label >= z.cols() {
            return Err(Error::InvalidArgument(format!("label {label} >= {} classes", z.cols())));
        }
        let (loss, probs) = softmax_cross_entropy(z.data(), label);
        let needs = self.needs(logits);
        Ok(self.push(
            Cow::Owned(Tensor::filled(1, 1, loss)),
            Op::CrossEntropy { logits, label, probs },
            needs,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Autodiff("backward called before a forward pass recorded the loss".into()));
        }
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        accumulate_gemm(&mut grads[a.0], &g, false, bv, true, av.shape());
                    }
                    if self.needs(*b) {
                        accumulate_gemm_left(&mut grads[b.0], av, &g, bv.shape());
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.needs(*v) {
                            accumulate(&mut grads[v.0], &g);
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let mut col_sums = vec![0.0; g.cols()];
                        for i in 0..g.rows() {
                            for (s, v) in col_sums.iter_mut().zip(g.row(i)) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads[row.0], &Tensor::row_vector(col_sums));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[a.0], &Tensor::from_vec(g.rows(), g.cols(), d)?);
                    }
                    if self.needs(*b) {
                        let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[b.0], &Tensor::from_vec(g.rows(), g.cols(), d)?);
                    }
                }
                Op::Relu(a) => {
                    let out = &node.value;
                    let d = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], &Tensor::from_vec(g.rows(), g.cols(), d)?);
                }
                Op::Scale(a, alpha) => {
                    accumulate(&mut grads[a.0], &g.map(|v| v * alpha));
                }
                Op::MeanRows(a) => {
                    let m = self.value(*a).rows();
                    let inv = 1.0 / m as f64;
                    let mut d = Tensor::zeros(m, g.cols());
                    for i in 0..m {
                        for (o, v) in d.row_mut(i).iter_mut().zip(g.data()) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape();
                    accumulate(&mut grads[a.0], &Tensor::filled(shape[0], shape[1], g.get(0, 0)));
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let scale = g.get(0, 0);
                    let mut d = probs.clone();
                    d[*label] -= 1.0;
                    d.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads[logits.0], &Tensor::row_vector(d));
                }
            }
        }
        // Only parameter leaves keep their gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(acc) => acc.axpy(1.0, g),
        None => *slot = Some(g.clone()),
    }
}

/// `slot += g * op(b)`.
fn accumulate_gemm(slot: &mut Option<Tensor>, g: &Tensor, tg: bool, b: &Tensor, tb: bool, shape: [usize; 2]) {
    let beta = if slot.is_some() { 1.0 } else { 0.0 };
    let out = slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
    gemm_into(g, tg, b, tb, out, beta);
}

/// `slot += a^T * g`.
fn accumulate_gemm_left(slot: &mut Option<Tensor>, a: &Tensor, g: &Tensor, shape: [usize; 2]) {
    let beta = if slot.is_some() { 1.0 } else { 0.0 };
    let out = slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
    gemm_into(a, true, g, false, out, beta);
}

/// Numerically stable `(-log softmax(z)[label], softmax(z))`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[label] - max);
    (loss.max(0.0), exps.into_iter().map(|e| e / total).collect())
}
