//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs are earlier nodes, so the
//! node vector is always in topological order and a single reverse sweep
//! visits each node after all of its consumers. Gradients are accumulated
//! with `+=`, which makes shared parameters work without special casing.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, matmul_into, sum_pairwise, sum_sequential, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Summation order used by the reducing kernels (layer norm statistics,
/// loss means, `sum`). Matrix products always accumulate left to right.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sequential,
    Pairwise,
}

impl Reduction {
    fn sum<T: Scalar>(self, xs: &[T]) -> T {
        match self {
            Reduction::Sequential => sum_sequential(xs),
            Reduction::Pairwise => sum_pairwise(xs),
        }
    }
}

pub const DEFAULT_LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sum(Var),
    WeightedSum(Var, Tensor<T>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Build it forward with the op methods, then call
/// [`Graph::backward`] once on a scalar node.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    reduction: Reduction,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the right shape when `v` did not reach
    /// the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take_or_zeros(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            reduction: Reduction::Sequential,
        }
    }

    pub fn with_reduction(reduction: Reduction) -> Self {
        Graph {
            nodes: Vec::new(),
            reduction,
        }
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions differ: [{n}x{k}] x [{k2}x{m}]"),
            ));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), n, k, m, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    /// `a[n x k] * b[m x k]^T`, used by the tied output head.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (m, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(
                "matmul_bt",
                format!("inner dimensions differ: [{n}x{k}] x [{m}x{k2}]^T"),
            ));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_a_bt_acc(self.value(a).data(), self.value(b).data(), n, m, k, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMulBt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// `x[..., m] + b[m]`, broadcasting `b` over every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let m = vx.last_dim();
        if vb.shape() != [m] {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} vs last dim {m}", vb.shape()),
            ));
        }
        let bias = vb.data();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(m) {
            for (o, &bj) in row.iter_mut().zip(bias) {
                *o += bj;
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).scaled(c);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.reduction.sum(self.value(a).data());
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// `sum(a * w)` for a constant weight tensor `w`.
    pub fn weighted_sum(&mut self, a: Var, w: Tensor<T>) -> Result<Var> {
        let va = self.value(a);
        if va.shape() != w.shape() {
            return Err(Error::dim(
                "weighted_sum",
                format!("{:?} vs {:?}", va.shape(), w.shape()),
            ));
        }
        let prod: Vec<T> = va.data().iter().zip(w.data()).map(|(&x, &y)| x * y).collect();
        let s = self.reduction.sum(&prod);
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, w), rg))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Normalizes each row of `x[..., d]` to zero mean and unit variance, then
    /// applies `gain * n + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if d == 0 {
            return Err(Error::dim("layer_norm", "zero feature dimension"));
        }
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} vs feature dim {d}",
                    vg.shape(),
                    vb.shape()
                ),
            ));
        }
        let rows = vx.rows();
        let dn = T::from_usize_lossy(d);
        let mut out = vec![T::zero(); rows * d];
        let mut normed = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut centered = vec![T::zero(); d];
        for r in 0..rows {
            let xr = &vx.data()[r * d..(r + 1) * d];
            let mean = self.reduction.sum(xr) / dn;
            for (c, &xv) in centered.iter_mut().zip(xr) {
                let z = xv - mean;
                *c = z * z;
            }
            let var = self.reduction.sum(&centered) / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let n = (xr[j] - mean) * rs;
                normed[r * d + j] = n;
                out[r * d + j] = n * vg.data()[j] + vb.data()[j];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            rg,
        ))
    }

    /// Row lookup: `out[r] = table[ids[r]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, d) = vt.dims2()?;
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding id",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Multi-head causal self-attention over `batch` sequences of length
    /// `seq`. `q`, `k`, `v` are `[batch * seq, d]` with heads laid out as
    /// contiguous `d / heads` column blocks; the output has the same layout.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.value(q).dims2()?;
        if self.value(k).shape() != [rows, d] || self.value(v).shape() != [rows, d] {
            return Err(Error::dim("causal_attention", "q, k, v shapes differ"));
        }
        if rows != batch * seq {
            return Err(Error::dim(
                "causal_attention",
                format!("{rows} rows but batch {batch} x seq {seq}"),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::dim(
                "causal_attention",
                format!("{heads} heads do not divide width {d}"),
            ));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut out = vec![T::zero(); rows * d];
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut scores = vec![T::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    let mut mx = T::neg_infinity();
                    for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                        let kj = &kd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        let mut dot = T::zero();
                        for (&a, &c) in qi.iter().zip(kj) {
                            dot += a * c;
                        }
                        *s = dot * scale;
                        if *s > mx {
                            mx = *s;
                        }
                    }
                    let mut z = T::zero();
                    for s in scores.iter_mut().take(i + 1) {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    let prow = &mut probs[pbase + i * seq..pbase + i * seq + seq];
                    for j in 0..=i {
                        prow[j] = scores[j] / z;
                    }
                    let orow = &mut out[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    for j in 0..=i {
                        let p = prow[j];
                        let vj = &vd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![rows, d], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            t,
            Op::CausalAttention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood (nats) of `targets` under row-wise
    /// softmax of `logits[N, V]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, v) = vl.dims2()?;
        if targets.len() != n {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{n} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                what: "target",
                index: bad,
                bound: v,
            });
        }
        let mut probs = vec![T::zero(); n * v];
        let mut losses = vec![T::zero(); n];
        for r in 0..n {
            let row = &vl.data()[r * v..(r + 1) * v];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let prow = &mut probs[r * v..(r + 1) * v];
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - mx).exp();
            }
            let z = self.reduction.sum(prow);
            for p in prow.iter_mut() {
                *p /= z;
            }
            losses[r] = z.ln() + mx - row[targets[r]];
        }
        let loss = self.reduction.sum(&losses) / T::from_usize_lossy(n);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node. Every node that requires a
    /// gradient and reaches `loss` gets one; the rest report zeros through
    /// [`Gradients::get_or_zeros`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        if let Some(t) = slot.as_mut() {
            f(t.data_mut());
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (n, k) = (va.shape()[0], va.shape()[1]);
                let m = vb.shape()[1];
                self.accumulate(grads, *a, |da| matmul_a_bt_acc(gd, vb.data(), n, k, m, da));
                self.accumulate(grads, *b, |db| matmul_at_b_acc(va.data(), gd, n, k, m, db));
            }
            Op::MatMulBt(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (n, k) = (va.shape()[0], va.shape()[1]);
                let m = vb.shape()[0];
                self.accumulate(grads, *a, |da| matmul_acc(gd, vb.data(), n, m, k, da));
                self.accumulate(grads, *b, |db| matmul_at_b_acc(gd, va.data(), n, m, k, db));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |dv| {
                        for (o, &x) in dv.iter_mut().zip(gd) {
                            *o += x;
                        }
                    });
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |dx| {
                    for (o, &gv) in dx.iter_mut().zip(gd) {
                        *o += gv;
                    }
                });
                let m = self.value(*b).len();
                self.accumulate(grads, *b, |db| {
                    for row in gd.chunks(m) {
                        for (o, &gv) in db.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, |da| {
                    for (o, &gv) in da.iter_mut().zip(gd) {
                        *o += c * gv;
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                self.accumulate(grads, *a, |da| {
                    for o in da.iter_mut() {
                        *o += g0;
                    }
                });
            }
            Op::WeightedSum(a, w) => {
                let g0 = gd[0];
                self.accumulate(grads, *a, |da| {
                    for (o, &wv) in da.iter_mut().zip(w.data()) {
                        *o += g0 * wv;
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                self.accumulate(grads, *x, |dx| {
                    for ((o, &xv), &gv) in dx.iter_mut().zip(vx.data()).zip(gd) {
                        *o += gv * gelu_grad(xv);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let d = self.value(*x).last_dim();
                let rows = rstd.len();
                let gamma = self.value(*gain).data();
                self.accumulate(grads, *gain, |dg| {
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += gd[r * d + j] * normed[r * d + j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |db| {
                    for row in gd.chunks(d) {
                        for (o, &gv) in db.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                });
                let red = self.reduction;
                let dn_len = T::from_usize_lossy(d);
                self.accumulate(grads, *x, |dx| {
                    let mut dnorm = vec![T::zero(); d];
                    let mut dnn = vec![T::zero(); d];
                    for r in 0..rows {
                        let nr = &normed[r * d..(r + 1) * d];
                        for j in 0..d {
                            dnorm[j] = gd[r * d + j] * gamma[j];
                            dnn[j] = dnorm[j] * nr[j];
                        }
                        let mean_dn = red.sum(&dnorm) / dn_len;
                        let mean_dnn = red.sum(&dnn) / dn_len;
                        for j in 0..d {
                            dx[r * d + j] += rstd[r] * (dnorm[j] - mean_dn - nr[j] * mean_dnn);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).shape()[1];
                self.accumulate(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gd[r * d..(r + 1) * d];
                        for (o, &gv) in dt[id * d..(id + 1) * d].iter_mut().zip(src) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::CausalAttention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *batch, *seq, *heads, probs, gd, grads),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = self.value(*logits).shape()[1];
                let n = targets.len();
                let coef = gd[0] / T::from_usize_lossy(n);
                self.accumulate(grads, *logits, |dl| {
                    for r in 0..n {
                        for j in 0..v {
                            let onehot = if j == targets[r] { T::one() } else { T::zero() };
                            dl[r * v + j] += coef * (probs[r * v + j] - onehot);
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: &[T],
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (rows, d) = (batch * seq, self.value(q).shape()[1]);
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); rows * d];
        let mut dv = vec![T::zero(); rows * d];
        let mut dp = vec![T::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let ri = (b * seq + i) * d + col;
                    let go = &gd[ri..ri + dh];
                    let prow = &probs[pbase + i * seq..pbase + i * seq + seq];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        let rj = (b * seq + j) * d + col;
                        let mut dot = T::zero();
                        for (&a, &c) in go.iter().zip(&vd[rj..rj + dh]) {
                            dot += a * c;
                        }
                        dp[j] = dot;
                        weighted += prow[j] * dot;
                        let p = prow[j];
                        for (o, &gv) in dv[rj..rj + dh].iter_mut().zip(go) {
                            *o += p * gv;
                        }
                    }
                    for j in 0..=i {
                        let rj = (b * seq + j) * d + col;
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        for t in 0..dh {
                            dq[ri + t] += ds * kd[rj + t];
                            dk[rj + t] += ds * qd[ri + t];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            self.accumulate(grads, var, |dst| {
                for (o, x) in dst.iter_mut().zip(buf) {
                    *o += x;
                }
            });
        }
    }
}

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-half * x * x).exp() * T::FRAC_2_SQRT_PI() * T::FRAC_1_SQRT_2() * half;
    cdf + x * pdf
}
