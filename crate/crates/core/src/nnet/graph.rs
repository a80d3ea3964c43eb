//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! Every operation appends a node holding its output value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! depends on a tracked leaf.

use rand::Rng;

use super::kernels::{self, AttentionShape};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
        scale: f64,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<u32>>,
        smoothing: f64,
        probs: Vec<f64>,
        count: usize,
    },
    WeightedSum(Var, Vec<f64>),
}

/// Output of [`Graph::cross_entropy`].
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropyOut {
    /// Scalar node: mean smoothed cross-entropy over counted rows.
    pub loss: Var,
    /// Mean negative log-likelihood of the gold tokens (no smoothing).
    pub nll: f64,
    pub count: usize,
}

#[derive(Default)]
pub struct Graph<'a> {
    values: Vec<Value<'a>>,
    ops: Vec<Op>,
    tracked: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, value: Value<'a>, op: Op, tracked: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.tracked.push(tracked);
        self.grads.push(None);
        Var(self.ops.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let tracked = parents.iter().any(|p| self.tracked[p.0]);
        self.push(Value::Owned(value), op, tracked)
    }

    /// Tracked leaf borrowed from outside the graph (a model parameter).
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, true)
    }

    /// Tracked leaf owned by the graph.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.values[v.0].get()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if `v` was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(tb.rows(), k, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        self.push_op(Tensor::from_vec(&[m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// Adds a `[n]` bias to each row of `[m, n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut out = self.value(x).clone();
        kernels::add_bias(out.data_mut(), self.value(b).data());
        self.push_op(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape());
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        self.push_op(out, Op::Add(a, b), &[a, b])
    }

    /// Adds an untracked tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.shape(), c.shape());
        for (o, v) in out.data_mut().iter_mut().zip(c.data()) {
            *o += v;
        }
        self.push_op(out, Op::AddConst(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push_op(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push_op(out, Op::Relu(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = kernels::gelu(*v));
        self.push_op(out, Op::Gelu(x), &[x])
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push_op(out, Op::Dropout(x, mask), &[x])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_exact_mut(c) {
            kernels::softmax_in_place(row);
        }
        self.push_op(out, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let tx = self.value(x);
        let (y, xhat, rstd) = kernels::layer_norm(tx.data(), self.value(gain).data(), self.value(bias).data());
        let shape = tx.shape().to_vec();
        self.push_op(
            Tensor::from_vec(&shape, y),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Gathers rows of `table` (`[vocab, d]`) and multiplies them by `scale`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], scale: f64) -> Var {
        let t = self.value(table);
        let d = t.cols();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend(t.row(id as usize).iter().map(|v| v * scale));
        }
        self.push_op(
            Tensor::from_vec(&[ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                scale,
            },
            &[table],
        )
    }

    /// Scaled dot-product multi-head attention; see [`AttentionShape`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Var {
        let (out, probs) = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            &shape,
        );
        let rows = shape.batch * shape.query_len;
        let d = shape.dim;
        self.push_op(
            Tensor::from_vec(&[rows, d], out),
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Mean label-smoothed cross-entropy of `logits` rows against
    /// `targets`; `None` rows are excluded.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<u32>], smoothing: f64) -> CrossEntropyOut {
        let t = self.value(logits);
        let (rows, vocab) = (t.rows(), t.cols());
        assert_eq!(rows, targets.len());
        let mut probs = t.data().to_vec();
        let (mut loss, mut nll, mut count) = (0.0, 0.0, 0usize);
        let uniform = smoothing / vocab as f64;
        for (row, tgt) in probs.chunks_exact_mut(vocab).zip(targets) {
            let Some(y) = tgt else { continue };
            kernels::log_softmax_in_place(row);
            let gold = row[*y as usize];
            let sum_all: f64 = row.iter().sum();
            nll -= gold;
            loss -= (1.0 - smoothing) * gold + uniform * sum_all;
            count += 1;
            row.iter_mut().for_each(|v| *v = v.exp());
        }
        let denom = count.max(1) as f64;
        let loss_var = self.push_op(
            Tensor::scalar(loss / denom),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
                count,
            },
            &[logits],
        );
        CrossEntropyOut {
            loss: loss_var,
            nll: nll / denom,
            count,
        }
    }

    /// `sum(x * weights)`, a scalar. Handy for checking gradients of
    /// tensor-valued ops.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let s = self.value(x).data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        self.push_op(Tensor::scalar(s), Op::WeightedSum(x, weights), &[x])
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward from a non-scalar");
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.tracked[i] {
                continue;
            }
            let Some(dy) = self.grads[i].take() else { continue };
            self.backward_node(i, &dy);
            self.grads[i] = Some(dy);
        }
    }

    fn backward_node(&mut self, i: usize, dy: &[f64]) {
        let values = &self.values;
        let tracked = &self.tracked;
        let grads = &mut self.grads;
        let val = |v: Var| values[v.0].get();
        let wants = |v: Var| tracked[v.0];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    kernels::gemm(m, n, k, dy, false, tb.data(), true, acc(grads, *a, m * k), 1.0);
                }
                if wants(*b) {
                    kernels::gemm(k, m, n, ta.data(), true, dy, false, acc(grads, *b, k * n), 1.0);
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    add_into(acc(grads, *x, dy.len()), dy);
                }
                if wants(*b) {
                    let n = val(*b).len();
                    let db = acc(grads, *b, n);
                    for row in dy.chunks_exact(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if wants(*p) {
                        add_into(acc(grads, *p, dy.len()), dy);
                    }
                }
            }
            Op::AddConst(x) => add_into(acc(grads, *x, dy.len()), dy),
            Op::Scale(x, s) => {
                for (g, d) in acc(grads, *x, dy.len()).iter_mut().zip(dy) {
                    *g += s * d;
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                for ((g, d), xi) in acc(grads, *x, dy.len()).iter_mut().zip(dy).zip(xv) {
                    if *xi > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                for ((g, d), xi) in acc(grads, *x, dy.len()).iter_mut().zip(dy).zip(xv) {
                    *g += d * kernels::gelu_grad(*xi);
                }
            }
            Op::Dropout(x, mask) => {
                for ((g, d), m) in acc(grads, *x, dy.len()).iter_mut().zip(dy).zip(mask) {
                    *g += d * m;
                }
            }
            Op::Softmax(x) => {
                let y = values[i].get();
                let c = y.cols();
                let gx = acc(grads, *x, dy.len());
                for ((yr, dr), gr) in y.data().chunks_exact(c).zip(dy.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gr[j] += yr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let g = val(*gain).data().to_vec();
                let d = g.len();
                let mut dx = wants(*x).then(|| vec![0.0; dy.len()]);
                let mut dg = wants(*gain).then(|| vec![0.0; d]);
                let mut db = wants(*bias).then(|| vec![0.0; d]);
                kernels::layer_norm_backward(dy, xhat, rstd, &g, dx.as_deref_mut(), dg.as_deref_mut(), db.as_deref_mut());
                for (p, gv) in [(x, dx), (gain, dg), (bias, db)] {
                    if let Some(gv) = gv {
                        add_into(acc(grads, *p, gv.len()), &gv);
                    }
                }
            }
            Op::Embedding { table, ids, scale } => {
                let t = val(*table);
                let (n, d) = (t.len(), t.cols());
                let gt = acc(grads, *table, n);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                    for (g, v) in dst.iter_mut().zip(&dy[r * d..(r + 1) * d]) {
                        *g += scale * v;
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let mut dq = vec![0.0; tq.len()];
                let mut dk = vec![0.0; tk.len()];
                let mut dv = vec![0.0; tv.len()];
                kernels::attention_backward(dy, tq.data(), tk.data(), tv.data(), probs, shape, &mut dq, &mut dk, &mut dv);
                for (p, gv) in [(q, dq), (k, dk), (v, dv)] {
                    if wants(*p) {
                        add_into(acc(grads, *p, gv.len()), &gv);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
                count,
            } => {
                let vocab = val(*logits).cols();
                let scale = dy[0] / (*count).max(1) as f64;
                let uniform = smoothing / vocab as f64;
                let gl = acc(grads, *logits, probs.len());
                for ((pr, gr), tgt) in probs.chunks_exact(vocab).zip(gl.chunks_exact_mut(vocab)).zip(targets) {
                    let Some(y) = tgt else { continue };
                    for j in 0..vocab {
                        let q = uniform + if j == *y as usize { 1.0 - smoothing } else { 0.0 };
                        gr[j] += scale * (pr[j] - q);
                    }
                }
            }
            Op::WeightedSum(x, w) => {
                for (g, wi) in acc(grads, *x, w.len()).iter_mut().zip(w) {
                    *g += dy[0] * wi;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
