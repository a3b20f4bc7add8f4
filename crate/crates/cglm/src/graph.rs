//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Graph`] records every operation in construction order; `backward`
//! replays the tape in exact reverse order, accumulating gradients by
//! summation so a value consumed twice receives both contributions.
//! Forward evaluation never mutates its inputs; node values are written
//! once and then read-only.

use thiserror::Error;

use crate::linalg::{mm_acc, mm_nt_acc, mm_tn_acc};
use crate::mixers::{self, ContextOp, MixerError, PairOp};
use crate::tensor::{el, Element, Tensor};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape {left:?} is not compatible with {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("softmax row {row} has no unmasked entries")]
    EmptySoftmaxRow { row: usize },
    #[error("index {index} out of range for size {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error(transparent)]
    Mixer(#[from] MixerError),
}

enum Op<E> {
    Leaf,
    /// y = a · b with a's leading axes collapsed to rows
    Matmul { a: VarId, b: VarId },
    /// y = a · bᵀ, b stored [n, k]
    MatmulNt { a: VarId, b: VarId },
    /// elementwise same-shape sum
    Add { a: VarId, b: VarId },
    /// elementwise same-shape product
    Mul { a: VarId, b: VarId },
    /// x[b,t,:] + rows[t,:] (learned position table)
    AddRows { x: VarId, rows: VarId },
    /// scalar sum of all elements
    SumAll { x: VarId },
    Gelu { x: VarId },
    /// weight-only layer norm over the last axis; caches per-row (mean, rstd)
    LayerNorm { x: VarId, w: VarId, cache: Vec<(E, E)> },
    /// softmax over the last axis; masked entries carry probability 0,
    /// which already zeroes their gradient in the backward formula
    Softmax { x: VarId },
    /// row gather out[i,:] = table[ids[i],:]
    Embed { table: VarId, ids: Vec<u32> },
    /// causal multi-head attention over fused qkv; caches probabilities
    Attend { qkv: VarId, n_head: usize, probs: Vec<E> },
    CausalPair { x: VarId, op: PairOp },
    PrefixMean { x: VarId },
    /// three-way causal mix; caches the prefix-mean context
    ContextMix { x: VarId, op: ContextOp, ctx: Vec<E> },
    /// mean over rows of -log softmax(logits)[target]
    CrossEntropy { logits: VarId, targets: Vec<u32> },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// Wengert tape: nodes in construction order, replayed backwards.
pub struct Graph<E> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    fn requires(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf that does not track gradients.
    pub fn input(&mut self, value: Tensor<E>) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf parameter; `backward` accumulates a gradient for it.
    pub fn param(&mut self, value: Tensor<E>) -> VarId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: VarId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: VarId) -> E {
        debug_assert_eq!(self.nodes[id.0].value.numel(), 1);
        self.nodes[id.0].value.data()[0]
    }

    /// Gradient accumulated for `id`, shaped like its value.
    pub fn grad(&self, id: VarId) -> Option<Tensor<E>> {
        self.grads[id.0].as_ref().map(|g| {
            Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("gradient buffers match value shapes")
        })
    }

    pub fn grad_slice(&self, id: VarId) -> Option<&[E]> {
        self.grads[id.0].as_deref()
    }

    // ── Forward ops ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.as_rows();
        if bv.rank() != 2 || bv.shape()[0] != k {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let n = bv.shape()[1];
        let mut out = vec![E::zero(); m * n];
        mm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Matmul { a, b }, req))
    }

    /// a · bᵀ with b stored [n, k]; the weight-tied vocabulary head.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.as_rows();
        if bv.rank() != 2 || bv.shape()[1] != k {
            return Err(GraphError::ShapeMismatch {
                op: "matmul_nt",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let n = bv.shape()[0];
        let mut out = vec![E::zero(); m * n];
        mm_nt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::MatmulNt { a, b }, req))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(GraphError::ShapeMismatch {
                op: "add",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Add { a, b }, req))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(GraphError::ShapeMismatch {
                op: "mul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Mul { a, b }, req))
    }

    /// x[b,t,:] + rows[t,:] for x `[B,T,d]`, rows `[P,d]`, T <= P.
    pub fn add_rows(&mut self, x: VarId, rows: VarId) -> Result<VarId, GraphError> {
        let (xv, rv) = (self.value(x), self.value(rows));
        let mismatch = || GraphError::ShapeMismatch {
            op: "add_rows",
            left: xv.shape().to_vec(),
            right: rv.shape().to_vec(),
        };
        if xv.rank() != 3 || rv.rank() != 2 {
            return Err(mismatch());
        }
        let (b, t_len, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if rv.shape()[1] != d || rv.shape()[0] < t_len {
            return Err(mismatch());
        }
        let mut data = xv.data().to_vec();
        for bi in 0..b {
            for t in 0..t_len {
                let base = (bi * t_len + t) * d;
                let row = &rv.data()[t * d..(t + 1) * d];
                for j in 0..d {
                    data[base + j] = data[base + j] + row[j];
                }
            }
        }
        let shape = xv.shape().to_vec();
        let req = self.requires(x) || self.requires(rows);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::AddRows { x, rows }, req))
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(E::zero(), |acc, &v| acc + v);
        let req = self.requires(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, req)
    }

    /// tanh-approximation GELU: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
    pub fn gelu(&mut self, x: VarId) -> VarId {
        let data = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::Gelu { x }, req)
    }

    /// Zero-mean unit-variance over the last axis (eps inside the square
    /// root), then elementwise scale by `w`. No bias term.
    pub fn layer_norm(&mut self, x: VarId, w: VarId) -> Result<VarId, GraphError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, d) = xv.as_rows();
        if wv.rank() != 1 || wv.shape()[0] != d {
            return Err(GraphError::ShapeMismatch {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let eps = el::<E>(LAYER_NORM_EPS);
        let inv_d = el::<E>(1.0 / d as f64);
        let mut data = vec![E::zero(); xv.numel()];
        let mut cache = Vec::with_capacity(rows);
        for r in 0..rows {
            let xrow = &xv.data()[r * d..(r + 1) * d];
            let mean = xrow.iter().fold(E::zero(), |a, &v| a + v) * inv_d;
            let var = xrow
                .iter()
                .fold(E::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_d;
            let rstd = (var + eps).sqrt().recip();
            cache.push((mean, rstd));
            for j in 0..d {
                data[r * d + j] = (xrow[j] - mean) * rstd * wv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let req = self.requires(x) || self.requires(w);
        Ok(self.push(
            Tensor::new(shape, data).unwrap(),
            Op::LayerNorm { x, w, cache },
            req,
        ))
    }

    /// Softmax over the last axis with max-subtraction. `mask[i] = true`
    /// marks entry i as disallowed; masked entries come out exactly 0.
    pub fn softmax_lastdim(
        &mut self,
        x: VarId,
        mask: Option<&[bool]>,
    ) -> Result<VarId, GraphError> {
        let xv = self.value(x);
        let (rows, d) = xv.as_rows();
        if let Some(m) = mask {
            if m.len() != xv.numel() {
                return Err(GraphError::ShapeMismatch {
                    op: "softmax_lastdim",
                    left: xv.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let mut data = vec![E::zero(); xv.numel()];
        for r in 0..rows {
            let xrow = &xv.data()[r * d..(r + 1) * d];
            let allowed = |j: usize| mask.map_or(true, |m| !m[r * d + j]);
            let mut maxv = E::neg_infinity();
            for j in 0..d {
                if allowed(j) && xrow[j] > maxv {
                    maxv = xrow[j];
                }
            }
            if maxv == E::neg_infinity() {
                return Err(GraphError::EmptySoftmaxRow { row: r });
            }
            let mut denom = E::zero();
            for j in 0..d {
                if allowed(j) {
                    let e = (xrow[j] - maxv).exp();
                    data[r * d + j] = e;
                    denom = denom + e;
                }
            }
            for j in 0..d {
                if allowed(j) {
                    data[r * d + j] = data[r * d + j] / denom;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let req = self.requires(x);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Softmax { x }, req))
    }

    /// Gather rows of `table` by id; output shape `leading ++ [d]`.
    pub fn embed(
        &mut self,
        table: VarId,
        ids: &[u32],
        leading: &[usize],
    ) -> Result<VarId, GraphError> {
        let tv = self.value(table);
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        debug_assert_eq!(leading.iter().product::<usize>(), ids.len());
        let mut data = vec![E::zero(); ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= vocab {
                return Err(GraphError::IndexOutOfRange {
                    index: id,
                    bound: vocab,
                });
            }
            data[i * d..(i + 1) * d].copy_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let mut shape = leading.to_vec();
        shape.push(d);
        let req = self.requires(table);
        Ok(self.push(
            Tensor::new(shape, data).unwrap(),
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            req,
        ))
    }

    /// Causal multi-head attention over a fused qkv tensor `[B, T, 3d]`.
    pub fn attend_heads(&mut self, qkv: VarId, n_head: usize) -> Result<VarId, GraphError> {
        let qv = self.value(qkv);
        let shape = qv.shape().to_vec();
        let (b, t_len, d3) = (shape[0], shape[1], shape[2]);
        let d = d3 / 3;
        let mut out = Tensor::zeros(&[b, t_len, d]);
        let probs =
            mixers::attend_heads_fwd(qv.data(), out.data_mut(), b, t_len, d, n_head, None)?;
        let req = self.requires(qkv);
        Ok(self.push(out, Op::Attend { qkv, n_head, probs }, req))
    }

    pub fn causal_pair(&mut self, x: VarId, op: PairOp) -> VarId {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let (b, t_len, d) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(&shape);
        mixers::causal_pair_fwd(xv.data(), out.data_mut(), b, t_len, d, op, None);
        let req = self.requires(x);
        self.push(out, Op::CausalPair { x, op }, req)
    }

    pub fn causal_prefix_mean(&mut self, x: VarId) -> VarId {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let (b, t_len, d) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(&shape);
        mixers::prefix_mean_fwd(xv.data(), out.data_mut(), b, t_len, d, None);
        let req = self.requires(x);
        self.push(out, Op::PrefixMean { x }, req)
    }

    pub fn causal_context_mix(&mut self, x: VarId, op: ContextOp) -> VarId {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let (b, t_len, d) = (shape[0], shape[1], shape[2]);
        let mut out = Tensor::zeros(&shape);
        let ctx = mixers::context_mix_fwd(xv.data(), out.data_mut(), b, t_len, d, op, None);
        let req = self.requires(x);
        self.push(out, Op::ContextMix { x, op, ctx }, req)
    }

    /// Mean over all rows of -log softmax(logits)[target], stabilized via
    /// log-sum-exp. Logits are `[.., V]`, one target id per row.
    pub fn cross_entropy(&mut self, logits: VarId, targets: &[u32]) -> Result<VarId, GraphError> {
        let lv = self.value(logits);
        let (rows, vocab) = lv.as_rows();
        if targets.len() != rows {
            return Err(GraphError::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = E::zero();
        for (r, &tgt) in targets.iter().enumerate() {
            let tgt = tgt as usize;
            if tgt >= vocab {
                return Err(GraphError::IndexOutOfRange {
                    index: tgt,
                    bound: vocab,
                });
            }
            let row = &lv.data()[r * vocab..(r + 1) * vocab];
            let maxv = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
            let sum_exp = row.iter().fold(E::zero(), |a, &v| a + (v - maxv).exp());
            let lse = maxv + sum_exp.ln();
            total = total + (lse - row[tgt]);
        }
        let loss = total / el::<E>(rows as f64);
        let req = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            req,
        ))
    }

    // ── Backward ─────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate by sum;
    /// leaves registered via [`Graph::input`] are skipped.
    pub fn backward(&mut self, loss: VarId) -> Result<(), GraphError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(GraphError::NotScalar {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        self.grads[loss.0] = Some(vec![E::one()]);

        for idx in (0..self.nodes.len()).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let dy = self.grads[idx].take().unwrap();
            backward_op(&self.nodes, &mut self.grads, idx, &dy);
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }
}

fn needs<E: Element>(nodes: &[Node<E>], id: VarId) -> bool {
    nodes[id.0].requires_grad
}

fn buf<'g, E: Element>(
    nodes: &[Node<E>],
    grads: &'g mut [Option<Vec<E>>],
    id: VarId,
) -> &'g mut Vec<E> {
    let n = nodes[id.0].value.numel();
    grads[id.0].get_or_insert_with(|| vec![E::zero(); n])
}

fn backward_op<E: Element>(
    nodes: &[Node<E>],
    grads: &mut [Option<Vec<E>>],
    idx: usize,
    dy: &[E],
) {
    let val = |id: VarId| nodes[id.0].value.data();
    match &nodes[idx].op {
        Op::Leaf => {}
        &Op::Matmul { a, b } => {
            let (m, k) = nodes[a.0].value.as_rows();
            let n = nodes[b.0].value.shape()[1];
            if needs(nodes, a) {
                mm_nt_acc(dy, val(b), buf(nodes, grads, a), m, n, k);
            }
            if needs(nodes, b) {
                mm_tn_acc(val(a), dy, buf(nodes, grads, b), m, k, n);
            }
        }
        &Op::MatmulNt { a, b } => {
            let (m, k) = nodes[a.0].value.as_rows();
            let n = nodes[b.0].value.shape()[0];
            if needs(nodes, a) {
                // dA = dY . B  ([m,n] x [n,k])
                mm_acc(dy, val(b), buf(nodes, grads, a), m, n, k);
            }
            if needs(nodes, b) {
                // dB = dY^T . A  ([n,m] x [m,k])
                mm_tn_acc(dy, val(a), buf(nodes, grads, b), m, n, k);
            }
        }
        &Op::Add { a, b } => {
            for id in [a, b] {
                if needs(nodes, id) {
                    let g = buf(nodes, grads, id);
                    for (gi, &d) in g.iter_mut().zip(dy) {
                        *gi = *gi + d;
                    }
                }
            }
        }
        &Op::Mul { a, b } => {
            if needs(nodes, a) {
                let bdat = val(b);
                let g = buf(nodes, grads, a);
                for i in 0..g.len() {
                    g[i] = g[i] + dy[i] * bdat[i];
                }
            }
            if needs(nodes, b) {
                let adat = val(a);
                let g = buf(nodes, grads, b);
                for i in 0..g.len() {
                    g[i] = g[i] + dy[i] * adat[i];
                }
            }
        }
        &Op::AddRows { x, rows } => {
            let shape = nodes[x.0].value.shape();
            let (b, t_len, d) = (shape[0], shape[1], shape[2]);
            if needs(nodes, x) {
                let g = buf(nodes, grads, x);
                for (gi, &di) in g.iter_mut().zip(dy) {
                    *gi = *gi + di;
                }
            }
            if needs(nodes, rows) {
                let g = buf(nodes, grads, rows);
                for bi in 0..b {
                    for t in 0..t_len {
                        let base = (bi * t_len + t) * d;
                        for j in 0..d {
                            g[t * d + j] = g[t * d + j] + dy[base + j];
                        }
                    }
                }
            }
        }
        &Op::SumAll { x } => {
            if needs(nodes, x) {
                let d = dy[0];
                let g = buf(nodes, grads, x);
                for gi in g.iter_mut() {
                    *gi = *gi + d;
                }
            }
        }
        &Op::Gelu { x } => {
            if needs(nodes, x) {
                let xdat = val(x);
                let g = buf(nodes, grads, x);
                for i in 0..g.len() {
                    g[i] = g[i] + dy[i] * gelu_grad_scalar(xdat[i]);
                }
            }
        }
        Op::LayerNorm { x, w, cache } => {
            let (x, w) = (*x, *w);
            let (rows, d) = nodes[x.0].value.as_rows();
            let inv_d = el::<E>(1.0 / d as f64);
            if needs(nodes, w) {
                let xdat = val(x);
                let g = buf(nodes, grads, w);
                for r in 0..rows {
                    let (mean, rstd) = cache[r];
                    for j in 0..d {
                        let xhat = (xdat[r * d + j] - mean) * rstd;
                        g[j] = g[j] + dy[r * d + j] * xhat;
                    }
                }
            }
            if needs(nodes, x) {
                let xdat = val(x);
                let wdat = val(w);
                let g = buf(nodes, grads, x);
                for r in 0..rows {
                    let (mean, rstd) = cache[r];
                    let mut sum_dxhat = E::zero();
                    let mut sum_dxhat_xhat = E::zero();
                    for j in 0..d {
                        let xhat = (xdat[r * d + j] - mean) * rstd;
                        let dxhat = dy[r * d + j] * wdat[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    }
                    for j in 0..d {
                        let xhat = (xdat[r * d + j] - mean) * rstd;
                        let dxhat = dy[r * d + j] * wdat[j];
                        let term = dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat;
                        g[r * d + j] = g[r * d + j] + rstd * term;
                    }
                }
            }
        }
        Op::Softmax { x } => {
            let x = *x;
            if needs(nodes, x) {
                let p = nodes[idx].value.data();
                let (rows, d) = nodes[x.0].value.as_rows();
                let g = buf(nodes, grads, x);
                for r in 0..rows {
                    let mut inner = E::zero();
                    for j in 0..d {
                        inner = inner + dy[r * d + j] * p[r * d + j];
                    }
                    for j in 0..d {
                        g[r * d + j] = g[r * d + j] + p[r * d + j] * (dy[r * d + j] - inner);
                    }
                }
            }
        }
        Op::Embed { table, ids } => {
            let table = *table;
            if needs(nodes, table) {
                let d = nodes[table.0].value.shape()[1];
                let g = buf(nodes, grads, table);
                for (i, &id) in ids.iter().enumerate() {
                    let dst = id as usize * d;
                    for j in 0..d {
                        g[dst + j] = g[dst + j] + dy[i * d + j];
                    }
                }
            }
        }
        Op::Attend { qkv, n_head, probs } => {
            let (qkv, n_head) = (*qkv, *n_head);
            if needs(nodes, qkv) {
                let shape = nodes[qkv.0].value.shape();
                let (b, t_len, d3) = (shape[0], shape[1], shape[2]);
                let d = d3 / 3;
                let qdat = val(qkv);
                let g = buf(nodes, grads, qkv);
                mixers::attend_heads_bwd(qdat, probs, dy, g, b, t_len, d, n_head);
            }
        }
        &Op::CausalPair { x, op } => {
            if needs(nodes, x) {
                let shape = nodes[x.0].value.shape();
                let (b, t_len, d) = (shape[0], shape[1], shape[2]);
                let xdat = val(x);
                let g = buf(nodes, grads, x);
                mixers::causal_pair_bwd(xdat, dy, g, b, t_len, d, op);
            }
        }
        &Op::PrefixMean { x } => {
            if needs(nodes, x) {
                let shape = nodes[x.0].value.shape();
                let (b, t_len, d) = (shape[0], shape[1], shape[2]);
                let g = buf(nodes, grads, x);
                mixers::prefix_mean_bwd(dy, g, b, t_len, d);
            }
        }
        Op::ContextMix { x, op, ctx } => {
            let (x, op) = (*x, *op);
            if needs(nodes, x) {
                let shape = nodes[x.0].value.shape();
                let (b, t_len, d) = (shape[0], shape[1], shape[2]);
                let xdat = val(x);
                let g = buf(nodes, grads, x);
                mixers::context_mix_bwd(xdat, ctx, dy, g, b, t_len, d, op);
            }
        }
        Op::CrossEntropy { logits, targets } => {
            let logits = *logits;
            if needs(nodes, logits) {
                let (rows, vocab) = nodes[logits.0].value.as_rows();
                let ldat = val(logits);
                let scale = dy[0] / el::<E>(rows as f64);
                let g = buf(nodes, grads, logits);
                for (r, &tgt) in targets.iter().enumerate() {
                    let row = &ldat[r * vocab..(r + 1) * vocab];
                    let maxv = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
                    let mut denom = E::zero();
                    for &v in row {
                        denom = denom + (v - maxv).exp();
                    }
                    for j in 0..vocab {
                        let p = (row[j] - maxv).exp() / denom;
                        let indicator = if j == tgt as usize { E::one() } else { E::zero() };
                        g[r * vocab + j] = g[r * vocab + j] + (p - indicator) * scale;
                    }
                }
            }
        }
    }

}

#[inline]
fn gelu_scalar<E: Element>(x: E) -> E {
    let half = el::<E>(0.5);
    let s = el::<E>(SQRT_2_OVER_PI);
    let c = el::<E>(GELU_CUBIC);
    half * x * (E::one() + (s * (x + c * x * x * x)).tanh_act())
}

#[inline]
fn gelu_grad_scalar<E: Element>(x: E) -> E {
    let half = el::<E>(0.5);
    let s = el::<E>(SQRT_2_OVER_PI);
    let c = el::<E>(GELU_CUBIC);
    let three = el::<E>(3.0);
    let u = s * (x + c * x * x * x);
    let t = u.tanh_act();
    half * (E::one() + t) + half * x * (E::one() - t * t) * s * (E::one() + three * c * x * x)
}

// ── Finite-difference gradient checker ───────────────────────────────

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` constructs a scalar loss from leaf parameters registered in
/// the order of `inputs`; it runs once for the tape gradients and twice
/// per element for the stencil. Returns the max relative error with
/// denominator max(|fd|, |ad|, 1e-8). Meant for f64.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<f64, GraphError>
where
    F: Fn(&mut Graph<f64>, &[VarId]) -> Result<VarId, GraphError>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64, GraphError> {
        let mut g = Graph::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            g.grad_slice(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
        })
        .collect();

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    for (ti, tensor) in inputs.iter().enumerate() {
        for e in 0..tensor.numel() {
            let orig = tensor.data()[e];
            work[ti].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let ad = analytic[ti][e];
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
