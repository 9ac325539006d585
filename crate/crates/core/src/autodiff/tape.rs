//! Tensor-level reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Tape`] holding its output value
//! and the ids of its inputs. Node ids are handed out in creation order, so
//! the node list is already topologically sorted and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! Parameters enter the tape through [`Tape::param`], which shares the
//! parameter storage (`Arc`) instead of copying it and caches the node so a
//! parameter used many times in one forward pass accumulates into a single
//! gradient.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a parameter inside a [`ParamSet`](super::ParamSet).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Scale(Var, S),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SumAll(Var),
    MeanAll(Var),
    Mean(Vec<Var>),
    WeightedSum(Var, Vec<Var>),
    MaxPieces(Var, Vec<usize>),
    Gather(Var, usize),
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Operation record for one forward pass. Confined to a single thread.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&self, value: Arc<Tensor<S>>, op: Op<S>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked, for differentiating with respect to inputs.
    pub fn input(&self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a parameter on the tape, reusing the node if it is already there.
    pub fn param(&self, id: ParamId, value: &Arc<Tensor<S>>) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let v = self.push_arc(Arc::clone(value), Op::Param, true);
        self.params.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<S>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn data(&self, v: Var) -> Vec<S> {
        self.nodes.borrow()[v.0].value.data().to_vec()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> S {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Stops gradient flow: returns a constant holding the current value of `v`.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.push_arc(value, Op::Leaf, false)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", &[sa, sb]));
            }
            let (m, k) = (sa[0], sa[1]);
            let n = if sb.len() == 2 { sb[1] } else { 1 };
            let (ad, bd) = (ta.data(), tb.data());
            let mut out = vec![S::zero(); m * n];
            if n == 1 {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &ad[i * k..(i + 1) * k];
                    *o = dot(row, bd);
                }
            } else {
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == S::zero() {
                            continue;
                        }
                        let brow = &bd[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &b) in orow.iter_mut().zip(brow) {
                            *o = *o + aip * b;
                        }
                    }
                }
            }
            let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
            Tensor::new(shape, out)?
        };
        Ok(self.push(out, Op::MatMul(a, b), self.needs_grad(&[a, b])))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, &[ta.shape(), tb.shape()]));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), self.needs_grad(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), self.needs_grad(&[a, b])))
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), self.needs_grad(&[a, b])))
    }

    fn with_scalar(
        &self,
        op: &'static str,
        a: Var,
        s: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let nodes = self.nodes.borrow();
        let (ta, ts) = (&nodes[a.0].value, &nodes[s.0].value);
        if ts.numel() != 1 {
            return Err(Error::shape(op, &[ta.shape(), ts.shape()]));
        }
        let k = ts.item();
        Ok(ta.map(|x| f(x, k)))
    }

    /// `a * s` where `s` holds a single value.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let out = self.with_scalar("mul_scalar", a, s, |x, k| x * k)?;
        Ok(self.push(out, Op::MulScalar(a, s), self.needs_grad(&[a, s])))
    }

    /// `a / s` where `s` holds a single value.
    pub fn div_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let out = self.with_scalar("div_scalar", a, s, |x, k| x / k)?;
        Ok(self.push(out, Op::DivScalar(a, s), self.needs_grad(&[a, s])))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&self, a: Var, k: S) -> Var {
        let out = self.nodes.borrow()[a.0].value.map(|x| x * k);
        self.push(out, Op::Scale(a, k), self.needs_grad(&[a]))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", &[]));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0].value.shape();
            let trailing = &first[1..];
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                if &t.shape()[1..] != trailing {
                    return Err(Error::shape("concat", &[first, t.shape()]));
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![rows];
            shape.extend_from_slice(trailing);
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, Op::Concat(parts.to_vec()), self.needs_grad(parts)))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if len == 0 || start + len > t.shape()[0] {
                return Err(Error::Shape {
                    op: "slice",
                    shapes: format!("{:?} rows {}..{}", t.shape(), start, start + len),
                });
            }
            let c = t.cols();
            let mut shape = t.shape().to_vec();
            shape[0] = len;
            Tensor::new(shape, t.data()[start * c..(start + len) * c].to_vec())?
        };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(out, Op::Slice(a, start), rg))
    }

    fn unary(&self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let out = self.nodes.borrow()[a.0].value.map(f);
        self.push(out, op, self.needs_grad(&[a]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    /// Softmax over all elements.
    pub fn softmax(&self, a: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            Tensor::new(t.shape().to_vec(), softmax_slice(t.data())).expect("same shape")
        };
        self.push(out, Op::Softmax(a), self.needs_grad(&[a]))
    }

    pub fn log_softmax(&self, a: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let d = t.data();
            let m = d.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = m + d.iter().map(|&x| (x - m).exp()).sum::<S>().ln();
            t.map(|x| x - lse)
        };
        self.push(out, Op::LogSoftmax(a), self.needs_grad(&[a]))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), self.needs_grad(&[a]))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let s = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            t.data().iter().copied().sum::<S>() / S::lit(t.numel() as f64)
        };
        self.push(Tensor::scalar(s), Op::MeanAll(a), self.needs_grad(&[a]))
    }

    /// Elementwise mean of equal-shaped tensors.
    pub fn mean(&self, items: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = items
                .first()
                .map(|v| &nodes[v.0].value)
                .ok_or_else(|| Error::shape("mean", &[]))?;
            let mut acc = vec![S::zero(); first.numel()];
            for v in items {
                let t = &nodes[v.0].value;
                if t.shape() != first.shape() {
                    return Err(Error::shape("mean", &[first.shape(), t.shape()]));
                }
                for (a, &x) in acc.iter_mut().zip(t.data()) {
                    *a = *a + x;
                }
            }
            let n = S::lit(items.len() as f64);
            acc.iter_mut().for_each(|a| *a = *a / n);
            Tensor::new(first.shape().to_vec(), acc)?
        };
        Ok(self.push(out, Op::Mean(items.to_vec()), self.needs_grad(items)))
    }

    /// `Σ_i weights[i] · items[i]`.
    pub fn weighted_sum(&self, weights: Var, items: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let w = &nodes[weights.0].value;
            if items.is_empty() || w.numel() != items.len() {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    shapes: format!("{} weights for {} items", w.numel(), items.len()),
                });
            }
            let first = &nodes[items[0].0].value;
            let mut acc = vec![S::zero(); first.numel()];
            for (&wi, v) in w.data().iter().zip(items) {
                let t = &nodes[v.0].value;
                if t.shape() != first.shape() {
                    return Err(Error::shape("weighted_sum", &[first.shape(), t.shape()]));
                }
                for (a, &x) in acc.iter_mut().zip(t.data()) {
                    *a = *a + wi * x;
                }
            }
            Tensor::new(first.shape().to_vec(), acc)?
        };
        let mut deps = items.to_vec();
        deps.push(weights);
        Ok(self.push(
            out,
            Op::WeightedSum(weights, items.to_vec()),
            self.needs_grad(&deps),
        ))
    }

    /// Maxout: splits a vector into `pieces` equal blocks and takes the
    /// elementwise max across blocks. Ties go to the lowest block index.
    pub fn max_pieces(&self, a: Var, pieces: usize) -> Result<Var> {
        let (out, argmax) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if t.shape().len() != 1 || pieces == 0 || !t.numel().is_multiple_of(pieces) {
                return Err(Error::Shape {
                    op: "max_pieces",
                    shapes: format!("{:?} into {} pieces", t.shape(), pieces),
                });
            }
            let d = t.numel() / pieces;
            let x = t.data();
            let mut out = Vec::with_capacity(d);
            let mut argmax = Vec::with_capacity(d);
            for j in 0..d {
                let mut best = j;
                for p in 1..pieces {
                    if x[p * d + j] > x[best] {
                        best = p * d + j;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
            (Tensor::vector(out), argmax)
        };
        Ok(self.push(out, Op::MaxPieces(a, argmax), self.needs_grad(&[a])))
    }

    /// Row lookup in a matrix (embedding tables).
    pub fn gather(&self, table: Var, row: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[table.0].value;
            if t.shape().len() != 2 {
                return Err(Error::shape("gather", &[t.shape()]));
            }
            if row >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    index: row,
                    len: t.rows(),
                });
            }
            Tensor::vector(t.row(row).to_vec())
        };
        Ok(self.push(out, Op::Gather(table, row), self.needs_grad(&[table])))
    }

    /// Single element (flat index) as a one-element tensor.
    pub fn pick(&self, a: Var, index: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if index >= t.numel() {
                return Err(Error::IndexOutOfRange {
                    index,
                    len: t.numel(),
                });
            }
            Tensor::scalar(t.data()[index])
        };
        Ok(self.push(out, Op::Pick(a, index), self.needs_grad(&[a])))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let ls = nodes[loss.0].value.shape();
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                backprop(&nodes, node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let params = self.params.borrow().iter().map(|(&p, &v)| (p, v)).collect();
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn softmax_slice<S: Scalar>(x: &[S]) -> Vec<S> {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn acc<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    v: Var,
    f: impl FnOnce(&mut [S]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let n = nodes[v.0].value.numel();
    let g = grads[v.0].get_or_insert_with(|| vec![S::zero(); n]);
    f(g);
}

fn backprop<S: Scalar>(
    nodes: &[Node<S>],
    node: &Node<S>,
    g: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let val = |v: Var| -> &Tensor<S> { &nodes[v.0].value };
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = if tb.shape().len() == 2 { tb.shape()[1] } else { 1 };
            let (ad, bd) = (ta.data(), tb.data());
            acc(nodes, grads, *a, |ga| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    let row = &mut ga[i * k..(i + 1) * k];
                    for (p, r) in row.iter_mut().enumerate() {
                        *r = *r + dot(gi, &bd[p * n..(p + 1) * n]);
                    }
                }
            });
            acc(nodes, grads, *b, |gb| {
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == S::zero() {
                            continue;
                        }
                        for p in 0..k {
                            gb[p * n + j] = gb[p * n + j] + arow[p] * gij;
                        }
                    }
                }
            });
        }
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |ga| add_into(ga, g));
            acc(nodes, grads, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |ga| add_into(ga, g));
            acc(nodes, grads, *b, |gb| {
                gb.iter_mut().zip(g).for_each(|(x, &y)| *x = *x - y)
            });
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            acc(nodes, grads, *a, |ga| {
                for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bd) {
                    *x = *x + gi * bi;
                }
            });
            acc(nodes, grads, *b, |gb| {
                for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(ad) {
                    *x = *x + gi * ai;
                }
            });
        }
        Op::MulScalar(a, s) => {
            let k = val(*s).item();
            let ad = val(*a).data();
            acc(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, &gi)| *x = *x + gi * k)
            });
            acc(nodes, grads, *s, |gs| gs[0] = gs[0] + dot(g, ad));
        }
        Op::DivScalar(a, s) => {
            let k = val(*s).item();
            acc(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, &gi)| *x = *x + gi / k)
            });
            // d(a/k)/dk = -a/k² = -out/k
            acc(nodes, grads, *s, |gs| gs[0] = gs[0] - dot(g, out) / k);
        }
        Op::Scale(a, k) => {
            acc(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, &gi)| *x = *x + gi * *k)
            });
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for p in parts {
                let n = val(*p).numel();
                acc(nodes, grads, *p, |gp| add_into(gp, &g[off..off + n]));
                off += n;
            }
        }
        Op::Slice(a, start) => {
            let c = val(*a).cols();
            let off = start * c;
            acc(nodes, grads, *a, |ga| add_into(&mut ga[off..off + g.len()], g));
        }
        Op::Tanh(a) => acc(nodes, grads, *a, |ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                *x = *x + gi * (S::one() - y * y);
            }
        }),
        Op::Sigmoid(a) => acc(nodes, grads, *a, |ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                *x = *x + gi * y * (S::one() - y);
            }
        }),
        Op::Exp(a) => acc(nodes, grads, *a, |ga| {
            for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                *x = *x + gi * y;
            }
        }),
        Op::Log(a) => {
            let ad = val(*a).data();
            acc(nodes, grads, *a, |ga| {
                for ((x, &gi), &ai) in ga.iter_mut().zip(g).zip(ad) {
                    *x = *x + gi / ai;
                }
            })
        }
        Op::Softmax(a) => {
            let gy = dot(g, out);
            acc(nodes, grads, *a, |ga| {
                for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x = *x + y * (gi - gy);
                }
            })
        }
        Op::LogSoftmax(a) => {
            let gsum: S = g.iter().copied().sum();
            acc(nodes, grads, *a, |ga| {
                for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x = *x + gi - y.exp() * gsum;
                }
            })
        }
        Op::SumAll(a) => acc(nodes, grads, *a, |ga| {
            ga.iter_mut().for_each(|x| *x = *x + g[0])
        }),
        Op::MeanAll(a) => {
            let n = S::lit(val(*a).numel() as f64);
            acc(nodes, grads, *a, |ga| {
                ga.iter_mut().for_each(|x| *x = *x + g[0] / n)
            })
        }
        Op::Mean(items) => {
            let n = S::lit(items.len() as f64);
            for v in items {
                acc(nodes, grads, *v, |gv| {
                    gv.iter_mut().zip(g).for_each(|(x, &gi)| *x = *x + gi / n)
                });
            }
        }
        Op::WeightedSum(w, items) => {
            let wd = val(*w).data();
            for (&wi, v) in wd.iter().zip(items) {
                acc(nodes, grads, *v, |gv| {
                    gv.iter_mut().zip(g).for_each(|(x, &gi)| *x = *x + wi * gi)
                });
            }
            acc(nodes, grads, *w, |gw| {
                for (gwi, v) in gw.iter_mut().zip(items) {
                    *gwi = *gwi + dot(g, val(*v).data());
                }
            });
        }
        Op::MaxPieces(a, argmax) => acc(nodes, grads, *a, |ga| {
            for (&src, &gi) in argmax.iter().zip(g) {
                ga[src] = ga[src] + gi;
            }
        }),
        Op::Gather(table, row) => {
            let c = val(*table).cols();
            acc(nodes, grads, *table, |gt| {
                add_into(&mut gt[row * c..(row + 1) * c], g)
            });
        }
        Op::Pick(a, index) => acc(nodes, grads, *a, |ga| ga[*index] = ga[*index] + g[0]),
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(x, &y)| *x = *x + y);
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
    params: HashMap<ParamId, Var>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a tape node; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient matches node"),
            None => Tensor::zeros(shape),
        }
    }

    /// Gradient of a parameter, `None` when it never appeared on the tape.
    pub fn param(&self, id: ParamId) -> Option<Tensor<S>> {
        self.params.get(&id).map(|&v| self.wrt(v))
    }
}
