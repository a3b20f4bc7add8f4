//! Causal sequence mixers: multi-head attention and its parameter-free
//! replacements.
//!
//! Every mixer maps `[B, T, d] -> [B, T, d]` and is strictly causal:
//! output position `t` reads input positions `0..=t` only. The static
//! mixers combine each token elementwise with its predecessor (max, min
//! or mean; the first token passes through unchanged), optionally adding
//! the running prefix-mean of all earlier tokens as a third comparand.
//!
//! Forward kernels take an optional [`OpCounter`] so measured counts can
//! be checked against the analytic cost models in `bench`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{axpy, dot, mm_acc};
use crate::tensor::{el, Element, Tensor};

// ── Kinds and parameters ─────────────────────────────────────────────

/// Which sequence-mixing stage a block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixerKind {
    Attention,
    CausalMax,
    CausalMin,
    CausalPairMean,
    CausalMaxContext,
    CausalMinContext,
}

impl MixerKind {
    pub const ALL: [MixerKind; 6] = [
        MixerKind::Attention,
        MixerKind::CausalMax,
        MixerKind::CausalMin,
        MixerKind::CausalPairMean,
        MixerKind::CausalMaxContext,
        MixerKind::CausalMinContext,
    ];

    /// True for the parameter-free mixers (everything except attention).
    pub fn is_static(self) -> bool {
        !matches!(self, MixerKind::Attention)
    }

    pub fn pair_op(self) -> Option<PairOp> {
        match self {
            MixerKind::CausalMax => Some(PairOp::Max),
            MixerKind::CausalMin => Some(PairOp::Min),
            MixerKind::CausalPairMean => Some(PairOp::Mean),
            _ => None,
        }
    }

    pub fn context_op(self) -> Option<ContextOp> {
        match self {
            MixerKind::CausalMaxContext => Some(ContextOp::Max),
            MixerKind::CausalMinContext => Some(ContextOp::Min),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MixerKind::Attention => "attention",
            MixerKind::CausalMax => "causal_max",
            MixerKind::CausalMin => "causal_min",
            MixerKind::CausalPairMean => "causal_pair_mean",
            MixerKind::CausalMaxContext => "causal_max_context",
            MixerKind::CausalMinContext => "causal_min_context",
        }
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self, MixerError> {
        MixerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| MixerError::UnknownKind(s.to_string()))
    }
}

/// Pairwise elementwise combiner with the previous token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairOp {
    Max,
    Min,
    Mean,
}

/// Elementwise extremum used by the context mixers and as the generative
/// feed-forward activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextOp {
    Max,
    Min,
}

impl ContextOp {
    pub fn name(self) -> &'static str {
        match self {
            ContextOp::Max => "max",
            ContextOp::Min => "min",
        }
    }

    #[inline(always)]
    fn better<E: Element>(self, candidate: E, incumbent: E) -> bool {
        match self {
            ContextOp::Max => candidate > incumbent,
            ContextOp::Min => candidate < incumbent,
        }
    }
}

impl fmt::Display for ContextOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextOp {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self, MixerError> {
        match s {
            "max" => Ok(ContextOp::Max),
            "min" => Ok(ContextOp::Min),
            _ => Err(MixerError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MixerError {
    #[error("unknown mixer or op name `{0}`")]
    UnknownKind(String),
    #[error("embedding width {d} is not divisible by n_head {n_head}")]
    HeadSplit { d: usize, n_head: usize },
    #[error("attention mixer needs AttentionParams")]
    MissingParams,
}

/// Fused QKV projection plus the per-block output projection.
///
/// `w_proj` is carried here because the spec ties it to the mixer stage,
/// but it is applied by the enclosing block for every mixer kind alike;
/// the static mixers keep it and drop only `w_qkv`.
#[derive(Clone, Debug)]
pub struct AttentionParams<E> {
    pub w_qkv: Tensor<E>,
    pub w_proj: Tensor<E>,
    pub n_head: usize,
}

impl<E: Element> AttentionParams<E> {
    pub fn new(w_qkv: Tensor<E>, w_proj: Tensor<E>, n_head: usize) -> Result<Self, MixerError> {
        let d = w_qkv.shape()[0];
        if n_head == 0 || d % n_head != 0 {
            return Err(MixerError::HeadSplit { d, n_head });
        }
        Ok(AttentionParams {
            w_qkv,
            w_proj,
            n_head,
        })
    }

    pub fn random<R: Rng>(d: usize, n_head: usize, rng: &mut R) -> Result<Self, MixerError> {
        let w_qkv = Tensor::randn(&[d, 3 * d], 0.02, rng);
        let w_proj = Tensor::randn(&[d, d], 0.02, rng);
        Self::new(w_qkv, w_proj, n_head)
    }
}

// ── Op counting ──────────────────────────────────────────────────────

/// Tallies of the elementwise work a mixer forward pass performs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub comparisons: u64,
    pub additions: u64,
    pub divisions: u64,
    pub muladds: u64,
    pub exps: u64,
}

impl OpCounter {
    pub fn total(&self) -> u64 {
        self.comparisons + self.additions + self.divisions + self.muladds + self.exps
    }
}

// ── Pairwise mixers ──────────────────────────────────────────────────

/// y[0] = x[0]; y[t] = op(x[t], x[t-1]) elementwise for t >= 1.
pub fn causal_pair_fwd<E: Element>(
    x: &[E],
    y: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    op: PairOp,
    mut counter: Option<&mut OpCounter>,
) {
    debug_assert_eq!(x.len(), b * t_len * d);
    debug_assert_eq!(y.len(), x.len());
    let half = el::<E>(0.5);
    for bi in 0..b {
        let base = bi * t_len * d;
        y[base..base + d].copy_from_slice(&x[base..base + d]);
        for t in 1..t_len {
            let cur = base + t * d;
            let prev = cur - d;
            for j in 0..d {
                let a = x[cur + j];
                let p = x[prev + j];
                y[cur + j] = match op {
                    PairOp::Max => a.max(p),
                    PairOp::Min => a.min(p),
                    PairOp::Mean => (a + p) * half,
                };
            }
        }
    }
    if let Some(c) = counter.as_deref_mut() {
        let per_seq = ((t_len - 1) * d) as u64 * b as u64;
        match op {
            PairOp::Max | PairOp::Min => c.comparisons += per_seq,
            PairOp::Mean => {
                c.additions += per_seq;
                c.divisions += per_seq;
            }
        }
    }
}

/// Routing backward for [`causal_pair_fwd`]. Max/min send each output
/// coordinate's gradient to the winning argument, ties to the current
/// token; mean splits it evenly.
pub fn causal_pair_bwd<E: Element>(
    x: &[E],
    dy: &[E],
    dx: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    op: PairOp,
) {
    let half = el::<E>(0.5);
    for bi in 0..b {
        let base = bi * t_len * d;
        for j in 0..d {
            dx[base + j] = dx[base + j] + dy[base + j];
        }
        for t in 1..t_len {
            let cur = base + t * d;
            let prev = cur - d;
            for j in 0..d {
                let g = dy[cur + j];
                match op {
                    PairOp::Mean => {
                        dx[cur + j] = dx[cur + j] + g * half;
                        dx[prev + j] = dx[prev + j] + g * half;
                    }
                    PairOp::Max => {
                        if x[cur + j] >= x[prev + j] {
                            dx[cur + j] = dx[cur + j] + g;
                        } else {
                            dx[prev + j] = dx[prev + j] + g;
                        }
                    }
                    PairOp::Min => {
                        if x[cur + j] <= x[prev + j] {
                            dx[cur + j] = dx[cur + j] + g;
                        } else {
                            dx[prev + j] = dx[prev + j] + g;
                        }
                    }
                }
            }
        }
    }
}

// ── Prefix mean ──────────────────────────────────────────────────────

/// Iterates the index pairs of a work-efficient in-place inclusive scan
/// (Brent-Kung: up-sweep then fill-in down-sweep, both of depth
/// O(log n)), calling `f(dst, src)` for each `a[dst] += a[src]`.
///
/// This schedule is the documented arithmetic order for the prefix sums;
/// both the kernel and the analytic op-count model walk it.
fn scan_schedule(n: usize, mut f: impl FnMut(usize, usize)) {
    let mut step = 1;
    while step < n {
        let mut i = 2 * step - 1;
        while i < n {
            f(i, i - step);
            i += 2 * step;
        }
        step *= 2;
    }
    step /= 2;
    while step >= 1 {
        let mut i = 3 * step - 1;
        while i < n {
            f(i, i - step);
            i += 2 * step;
        }
        step /= 2;
    }
}

/// Number of `+=` row operations the scan performs for length `n`.
pub fn scan_add_rows(n: usize) -> u64 {
    let mut count = 0u64;
    scan_schedule(n, |_, _| count += 1);
    count
}

/// y[t] = mean(x[0..=t]) along the sequence axis, via the parallel-scan
/// schedule followed by a per-position divide.
pub fn prefix_mean_fwd<E: Element>(
    x: &[E],
    y: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    mut counter: Option<&mut OpCounter>,
) {
    debug_assert_eq!(x.len(), b * t_len * d);
    y.copy_from_slice(x);
    for bi in 0..b {
        let rows = &mut y[bi * t_len * d..(bi + 1) * t_len * d];
        scan_schedule(t_len, |dst, src| {
            let (lo, hi) = rows.split_at_mut(dst * d);
            let src_row = &lo[src * d..src * d + d];
            let dst_row = &mut hi[..d];
            for (o, &s) in dst_row.iter_mut().zip(src_row) {
                *o = *o + s;
            }
        });
        for t in 0..t_len {
            let inv = el::<E>(1.0 / (t + 1) as f64);
            for v in &mut rows[t * d..(t + 1) * d] {
                *v = *v * inv;
            }
        }
    }
    if let Some(c) = counter.as_deref_mut() {
        c.additions += scan_add_rows(t_len) * d as u64 * b as u64;
        c.divisions += (t_len * d * b) as u64;
    }
}

/// dL/dx[s] = sum_{t >= s} dy[t]/(t+1): a suffix sum of the scaled
/// upstream gradient, accumulated sequentially from the end.
pub fn prefix_mean_bwd<E: Element>(dy: &[E], dx: &mut [E], b: usize, t_len: usize, d: usize) {
    for bi in 0..b {
        let base = bi * t_len * d;
        let mut acc = vec![E::zero(); d];
        for t in (0..t_len).rev() {
            let inv = el::<E>(1.0 / (t + 1) as f64);
            let row = base + t * d;
            for j in 0..d {
                acc[j] = acc[j] + dy[row + j] * inv;
                dx[row + j] = dx[row + j] + acc[j];
            }
        }
    }
}

// ── Context mixers ───────────────────────────────────────────────────

/// y[t] = op(x[t], x[t-1], c[t]) elementwise, where c is the causal
/// prefix mean and the x[t-1] argument is absent at t = 0. Returns the
/// context vectors so backward can re-derive the routing.
pub fn context_mix_fwd<E: Element>(
    x: &[E],
    y: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    op: ContextOp,
    mut counter: Option<&mut OpCounter>,
) -> Vec<E> {
    let mut ctx = vec![E::zero(); x.len()];
    prefix_mean_fwd(x, &mut ctx, b, t_len, d, counter.as_deref_mut());
    for bi in 0..b {
        let base = bi * t_len * d;
        for t in 0..t_len {
            let cur = base + t * d;
            for j in 0..d {
                let mut best = x[cur + j];
                if t > 0 && op.better(x[cur - d + j], best) {
                    best = x[cur - d + j];
                }
                if op.better(ctx[cur + j], best) {
                    best = ctx[cur + j];
                }
                y[cur + j] = best;
            }
        }
    }
    if let Some(c) = counter.as_deref_mut() {
        // 1 comparison at t = 0, 2 per position after that
        c.comparisons += ((2 * t_len - 1) * d) as u64 * b as u64;
    }
    ctx
}

/// Per-coordinate winner of the three-way comparison. Ties prefer the
/// current token, then the previous one, so the t = 0 case (where the
/// context equals the token itself) routes straight to the input.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum ContextWinner {
    Current,
    Previous,
    Context,
}

fn context_winner<E: Element>(op: ContextOp, cur: E, prev: Option<E>, ctx: E) -> ContextWinner {
    let mut winner = ContextWinner::Current;
    let mut best = cur;
    if let Some(p) = prev {
        if op.better(p, best) {
            winner = ContextWinner::Previous;
            best = p;
        }
    }
    if op.better(ctx, best) {
        winner = ContextWinner::Context;
    }
    winner
}

/// Backward for [`context_mix_fwd`]: gradients route to the winning
/// argument; wins by the context flow back through the prefix-mean scan.
pub fn context_mix_bwd<E: Element>(
    x: &[E],
    ctx: &[E],
    dy: &[E],
    dx: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    op: ContextOp,
) {
    let mut dctx = vec![E::zero(); x.len()];
    for bi in 0..b {
        let base = bi * t_len * d;
        for t in 0..t_len {
            let cur = base + t * d;
            for j in 0..d {
                let prev = (t > 0).then(|| x[cur - d + j]);
                let g = dy[cur + j];
                match context_winner(op, x[cur + j], prev, ctx[cur + j]) {
                    ContextWinner::Current => dx[cur + j] = dx[cur + j] + g,
                    ContextWinner::Previous => dx[cur - d + j] = dx[cur - d + j] + g,
                    ContextWinner::Context => dctx[cur + j] = dctx[cur + j] + g,
                }
            }
        }
    }
    prefix_mean_bwd(&dctx, dx, b, t_len, d);
}

// ── Causal multi-head attention ──────────────────────────────────────

/// Softmax(QKᵀ/√(d/h)) · V per head over a fused qkv buffer `[B, T, 3d]`,
/// strict causal masking. Heads are concatenated into `y: [B, T, d]`; no
/// output projection here. Returns the attention probabilities
/// `[B, n_head, T, T]` (zero above the diagonal) for the backward pass.
pub fn attend_heads_fwd<E: Element>(
    qkv: &[E],
    y: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    n_head: usize,
    mut counter: Option<&mut OpCounter>,
) -> Result<Vec<E>, MixerError> {
    if n_head == 0 || d % n_head != 0 {
        return Err(MixerError::HeadSplit { d, n_head });
    }
    debug_assert_eq!(qkv.len(), b * t_len * 3 * d);
    let hs = d / n_head;
    let scale = el::<E>(1.0 / (hs as f64).sqrt());
    let mut probs = vec![E::zero(); b * n_head * t_len * t_len];

    y.par_chunks_mut(t_len * d)
        .zip(probs.par_chunks_mut(n_head * t_len * t_len))
        .enumerate()
        .for_each(|(bi, (yb, pb))| {
            let qkv_b = &qkv[bi * t_len * 3 * d..(bi + 1) * t_len * 3 * d];
            let row = |t: usize, third: usize, h: usize| {
                let off = t * 3 * d + third * d + h * hs;
                &qkv_b[off..off + hs]
            };
            for h in 0..n_head {
                for t in 0..t_len {
                    let q = row(t, 0, h);
                    let srow = &mut pb[h * t_len * t_len + t * t_len..][..t_len];
                    let mut maxv = E::neg_infinity();
                    for s in 0..=t {
                        let sc = dot(q, row(s, 1, h)) * scale;
                        srow[s] = sc;
                        if sc > maxv {
                            maxv = sc;
                        }
                    }
                    let mut denom = E::zero();
                    for v in srow.iter_mut().take(t + 1) {
                        *v = (*v - maxv).exp();
                        denom = denom + *v;
                    }
                    for v in srow.iter_mut().take(t + 1) {
                        *v = *v / denom;
                    }
                    let yrow = &mut yb[t * d + h * hs..t * d + (h + 1) * hs];
                    for s in 0..=t {
                        let p = pb[h * t_len * t_len + t * t_len + s];
                        let v_off = s * 3 * d + 2 * d + h * hs;
                        for j in 0..hs {
                            yrow[j] = yrow[j] + p * qkv_b[v_off + j];
                        }
                    }
                }
            }
        });

    if let Some(c) = counter.as_deref_mut() {
        // scores + value mix over the causal triangle, per head
        let tri = (t_len * (t_len + 1) / 2) as u64;
        c.muladds += 2 * tri * hs as u64 * (n_head * b) as u64;
        c.exps += tri * (n_head * b) as u64;
        c.additions += tri * (n_head * b) as u64;
        c.divisions += tri * (n_head * b) as u64;
        c.comparisons += tri * (n_head * b) as u64; // running max for stability
    }
    Ok(probs)
}

/// Backward for [`attend_heads_fwd`]; accumulates into `dqkv`.
pub fn attend_heads_bwd<E: Element>(
    qkv: &[E],
    probs: &[E],
    dy: &[E],
    dqkv: &mut [E],
    b: usize,
    t_len: usize,
    d: usize,
    n_head: usize,
) {
    debug_assert_eq!(dqkv.len(), b * t_len * 3 * d);
    let hs = d / n_head;
    let scale = el::<E>(1.0 / (hs as f64).sqrt());

    dqkv.par_chunks_mut(t_len * 3 * d)
        .enumerate()
        .for_each(|(bi, dqkv_b)| {
            let qkv_b = &qkv[bi * t_len * 3 * d..(bi + 1) * t_len * 3 * d];
            let dy_b = &dy[bi * t_len * d..(bi + 1) * t_len * d];
            let off = |t: usize, third: usize, h: usize| t * 3 * d + third * d + h * hs;
            let mut dprow = vec![E::zero(); t_len];
            for h in 0..n_head {
                let pb = &probs[(bi * n_head + h) * t_len * t_len..][..t_len * t_len];
                for t in 0..t_len {
                    let dout = &dy_b[t * d + h * hs..t * d + (h + 1) * hs];
                    let prow = &pb[t * t_len..][..t_len];
                    // dP, then softmax backward to dS (reusing the buffer)
                    let mut inner = E::zero();
                    for s in 0..=t {
                        let dv = dot(dout, &qkv_b[off(s, 2, h)..off(s, 2, h) + hs]);
                        dprow[s] = dv;
                        inner = inner + dv * prow[s];
                    }
                    for s in 0..=t {
                        dprow[s] = prow[s] * (dprow[s] - inner);
                    }
                    // dV, dQ, dK; qkv and dqkv are disjoint buffers
                    for s in 0..=t {
                        let p = prow[s];
                        let dv_row = &mut dqkv_b[off(s, 2, h)..off(s, 2, h) + hs];
                        axpy(p, dout, dv_row);
                    }
                    let q_t = &qkv_b[off(t, 0, h)..off(t, 0, h) + hs];
                    for s in 0..=t {
                        let ds = dprow[s] * scale;
                        let k_s = &qkv_b[off(s, 1, h)..off(s, 1, h) + hs];
                        let dq_row = &mut dqkv_b[off(t, 0, h)..off(t, 0, h) + hs];
                        axpy(ds, k_s, dq_row);
                        let dk_row = &mut dqkv_b[off(s, 1, h)..off(s, 1, h) + hs];
                        axpy(ds, q_t, dk_row);
                    }
                }
            }
        });
}

/// Standalone attention mixer: fused QKV projection then causal
/// multi-head mixing. The output projection is not applied; the block
/// owns it for every mixer kind.
pub fn attention<E: Element>(
    x: &Tensor<E>,
    params: &AttentionParams<E>,
    mut counter: Option<&mut OpCounter>,
) -> Result<Tensor<E>, MixerError> {
    let (bt, d) = x.as_rows();
    let shape = x.shape();
    let (b, t_len) = (shape[0], shape[1]);
    let mut qkv = vec![E::zero(); bt * 3 * d];
    mm_acc(x.data(), params.w_qkv.data(), &mut qkv, bt, d, 3 * d);
    if let Some(c) = counter.as_deref_mut() {
        c.muladds += (bt * d * 3 * d) as u64;
    }
    let mut y = Tensor::zeros(shape);
    attend_heads_fwd(&qkv, y.data_mut(), b, t_len, d, params.n_head, counter)?;
    Ok(y)
}

/// Apply a static mixer kind (anything except attention) to `[B, T, d]`.
pub fn static_mix<E: Element>(
    x: &Tensor<E>,
    kind: MixerKind,
    counter: Option<&mut OpCounter>,
) -> Tensor<E> {
    let shape = x.shape();
    let (b, t_len, d) = (shape[0], shape[1], shape[2]);
    let mut y = Tensor::zeros(shape);
    if let Some(op) = kind.pair_op() {
        causal_pair_fwd(x.data(), y.data_mut(), b, t_len, d, op, counter);
    } else if let Some(op) = kind.context_op() {
        context_mix_fwd(x.data(), y.data_mut(), b, t_len, d, op, counter);
    } else {
        panic!("static_mix called with {kind}");
    }
    y
}

// ── Naive reference oracle ───────────────────────────────────────────

/// Per-position loop reference for every mixer kind: no scan, no fused
/// buffers, no masking tricks. Intended for small inputs (T <= 32); the
/// property tests compare the fast paths against this.
pub fn mixer_oracle<E: Element>(
    x: &Tensor<E>,
    kind: MixerKind,
    params: Option<&AttentionParams<E>>,
) -> Result<Tensor<E>, MixerError> {
    let shape = x.shape();
    let (b, t_len, d) = (shape[0], shape[1], shape[2]);
    let xd = x.data();
    let at = |bi: usize, t: usize, j: usize| xd[(bi * t_len + t) * d + j];
    let mut y = Tensor::zeros(shape);
    let yd = y.data_mut();

    match kind {
        MixerKind::CausalMax | MixerKind::CausalMin | MixerKind::CausalPairMean => {
            let op = kind.pair_op().unwrap();
            for bi in 0..b {
                for t in 0..t_len {
                    for j in 0..d {
                        let cur = at(bi, t, j);
                        let v = if t == 0 {
                            cur
                        } else {
                            let prev = at(bi, t - 1, j);
                            match op {
                                PairOp::Max => {
                                    if cur >= prev {
                                        cur
                                    } else {
                                        prev
                                    }
                                }
                                PairOp::Min => {
                                    if cur <= prev {
                                        cur
                                    } else {
                                        prev
                                    }
                                }
                                PairOp::Mean => (cur + prev) * el::<E>(0.5),
                            }
                        };
                        yd[(bi * t_len + t) * d + j] = v;
                    }
                }
            }
        }
        MixerKind::CausalMaxContext | MixerKind::CausalMinContext => {
            let op = kind.context_op().unwrap();
            for bi in 0..b {
                for t in 0..t_len {
                    for j in 0..d {
                        let mut sum = E::zero();
                        for s in 0..=t {
                            sum = sum + at(bi, s, j);
                        }
                        let ctx = sum / el::<E>((t + 1) as f64);
                        let cur = at(bi, t, j);
                        let prev = (t > 0).then(|| at(bi, t - 1, j));
                        let mut best = cur;
                        if let Some(p) = prev {
                            if op.better(p, best) {
                                best = p;
                            }
                        }
                        if op.better(ctx, best) {
                            best = ctx;
                        }
                        yd[(bi * t_len + t) * d + j] = best;
                    }
                }
            }
        }
        MixerKind::Attention => {
            let p = params.ok_or(MixerError::MissingParams)?;
            let hs = d / p.n_head;
            if p.n_head == 0 || d % p.n_head != 0 {
                return Err(MixerError::HeadSplit { d, n_head: p.n_head });
            }
            let w = p.w_qkv.data();
            // projected vector `third` (0=q,1=k,2=v) for token (bi, t), head h
            let proj = |bi: usize, t: usize, third: usize, h: usize| -> Vec<E> {
                (0..hs)
                    .map(|c| {
                        let col = third * d + h * hs + c;
                        let mut s = E::zero();
                        for j in 0..d {
                            s = s + at(bi, t, j) * w[j * 3 * d + col];
                        }
                        s
                    })
                    .collect()
            };
            let scale = el::<E>(1.0 / (hs as f64).sqrt());
            for bi in 0..b {
                for h in 0..p.n_head {
                    for t in 0..t_len {
                        let q = proj(bi, t, 0, h);
                        let mut weights = Vec::with_capacity(t + 1);
                        for s in 0..=t {
                            let k = proj(bi, s, 1, h);
                            let mut sc = E::zero();
                            for c in 0..hs {
                                sc = sc + q[c] * k[c];
                            }
                            weights.push((sc * scale).exp());
                        }
                        let denom = weights.iter().fold(E::zero(), |a, &w| a + w);
                        for s in 0..=t {
                            let v = proj(bi, s, 2, h);
                            let wgt = weights[s] / denom;
                            for c in 0..hs {
                                yd[(bi * t_len + t) * d + h * hs + c] =
                                    yd[(bi * t_len + t) * d + h * hs + c] + wgt * v[c];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tens(b: usize, t: usize, d: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![b, t, d], vals.to_vec()).unwrap()
    }

    #[test]
    fn pair_max_follows_definition() {
        // x = [[1,4],[3,2],[0,5]] -> [[1,4],[3,4],[3,5]]
        let x = tens(1, 3, 2, &[1.0, 4.0, 3.0, 2.0, 0.0, 5.0]);
        let y = static_mix(&x, MixerKind::CausalMax, None);
        assert_eq!(y.data(), &[1.0, 4.0, 3.0, 4.0, 3.0, 5.0]);
    }

    #[test]
    fn single_token_passes_through_for_all_ops() {
        let x = tens(2, 1, 3, &[1.0, -2.0, 0.5, 4.0, 4.0, -1.0]);
        for kind in [
            MixerKind::CausalMax,
            MixerKind::CausalMin,
            MixerKind::CausalPairMean,
            MixerKind::CausalMaxContext,
            MixerKind::CausalMinContext,
        ] {
            let y = static_mix(&x, kind, None);
            assert_eq!(y.data(), x.data(), "{kind}");
        }
    }

    #[test]
    fn constant_sequence_is_fixed_point() {
        let x = Tensor::<f64>::full(&[1, 5, 3], 2.5);
        for kind in MixerKind::ALL.into_iter().filter(|k| k.is_static()) {
            let y = static_mix(&x, kind, None);
            for (a, b) in y.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn prefix_mean_running_average() {
        // [[2],[4],[6]] -> [[2],[3],[4]]
        let x = [2.0f64, 4.0, 6.0];
        let mut y = [0.0; 3];
        prefix_mean_fwd(&x, &mut y, 1, 3, 1, None);
        assert_eq!(y, [2.0, 3.0, 4.0]);
    }

    #[test]
    fn prefix_mean_scan_matches_sequential_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (b, t_len, d) = (2, 128, 5);
        let x = Tensor::<f64>::randn(&[b, t_len, d], 1.0, &mut rng);
        let mut y = vec![0.0; x.numel()];
        prefix_mean_fwd(x.data(), &mut y, b, t_len, d, None);
        for bi in 0..b {
            for j in 0..d {
                let mut run = 0.0;
                for t in 0..t_len {
                    run += x.data()[(bi * t_len + t) * d + j];
                    let want = run / (t + 1) as f64;
                    let got = y[(bi * t_len + t) * d + j];
                    let rel = (got - want).abs() / want.abs().max(1e-8);
                    assert!(rel < 1e-6, "rel {rel} at b={bi} t={t} j={j}");
                }
            }
        }
    }

    #[test]
    fn context_mix_examples() {
        // x = [[0],[4],[2]]: c = [0,2,2], y = [0,4,4]
        let x = tens(1, 3, 1, &[0.0, 4.0, 2.0]);
        let y = static_mix(&x, MixerKind::CausalMaxContext, None);
        assert_eq!(y.data(), &[0.0, 4.0, 4.0]);

        // x = [[4],[0],[1]]: c = [4,2,5/3], context wins at t=2
        let x = tens(1, 3, 1, &[4.0, 0.0, 1.0]);
        let y = static_mix(&x, MixerKind::CausalMaxContext, None);
        assert!((y.data()[0] - 4.0).abs() < 1e-12);
        assert!((y.data()[1] - 4.0).abs() < 1e-12);
        assert!((y.data()[2] - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pair_counter_matches_closed_form() {
        let (t_len, d) = (64, 128);
        let x = Tensor::<f32>::full(&[1, t_len, d], 1.0);
        let mut c = OpCounter::default();
        static_mix(&x, MixerKind::CausalMax, Some(&mut c));
        assert_eq!(c.comparisons, ((t_len - 1) * d) as u64); // 8064
        assert_eq!(c.comparisons, 8064);
    }

    #[test]
    fn scan_add_rows_single_and_pow2() {
        assert_eq!(scan_add_rows(1), 0);
        // n = 8: up-sweep 7, down-sweep 4
        assert_eq!(scan_add_rows(8), 11);
    }

    #[test]
    fn oracle_matches_fast_static_paths_bit_exactly_for_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f32>::randn(&[2, 17, 9], 1.0, &mut rng);
        for kind in [MixerKind::CausalMax, MixerKind::CausalMin] {
            let fast = static_mix(&x, kind, None);
            let slow = mixer_oracle(&x, kind, None).unwrap();
            assert_eq!(fast.data(), slow.data(), "{kind}");
        }
    }

    #[test]
    fn attention_single_token_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let params = AttentionParams::<f64>::random(d, 2, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 1, d], 1.0, &mut rng);
        let y = attention(&x, &params, None).unwrap();
        // softmax over one element is 1, so output = V projection of token 0
        let w = params.w_qkv.data();
        for c in 0..d {
            let mut v = 0.0;
            for j in 0..d {
                v += x.data()[j] * w[j * 3 * d + 2 * d + c];
            }
            assert!((y.data()[c] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_queries_give_uniform_causal_average_of_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, t_len, d, n_head) = (1, 5, 6, 2);
        let mut params = AttentionParams::<f64>::random(d, n_head, &mut rng).unwrap();
        for j in 0..d {
            for c in 0..d {
                params.w_qkv.data_mut()[j * 3 * d + c] = 0.0; // zero the Q block
            }
        }
        let x = Tensor::randn(&[b, t_len, d], 1.0, &mut rng);
        let y = attention(&x, &params, None).unwrap();
        // expected: mean over s<=t of V rows
        let w = params.w_qkv.data();
        for t in 0..t_len {
            for c in 0..d {
                let mut mean = 0.0;
                for s in 0..=t {
                    let mut v = 0.0;
                    for j in 0..d {
                        v += x.data()[s * d + j] * w[j * 3 * d + 2 * d + c];
                    }
                    mean += v;
                }
                mean /= (t + 1) as f64;
                assert!(
                    (y.data()[t * d + c] - mean).abs() < 1e-10,
                    "t={t} c={c}"
                );
            }
        }
    }

    #[test]
    fn two_token_single_head_matches_hand_evaluation() {
        // d = 2, one head, T = 2: y_1 = softmax([q1.k0, q1.k1]/sqrt(2)) . [v0, v1]
        let d = 2;
        let w_qkv = Tensor::new(
            vec![2, 6],
            vec![
                0.3, -0.2, 0.5, 0.1, -0.4, 0.7, // row for x[0]
                0.6, 0.4, -0.1, 0.2, 0.8, -0.5, // row for x[1]
            ],
        )
        .unwrap();
        let params =
            AttentionParams::new(w_qkv.clone(), Tensor::zeros(&[2, 2]), 1).unwrap();
        let x = tens(1, 2, 2, &[1.0, -0.5, 0.25, 2.0]);
        let y = attention(&x, &params, None).unwrap();

        let w = w_qkv.data();
        let project = |t: usize, third: usize| -> [f64; 2] {
            let mut out = [0.0; 2];
            for c in 0..2 {
                for j in 0..2 {
                    out[c] += x.data()[t * d + j] * w[j * 6 + third * 2 + c];
                }
            }
            out
        };
        let (q1, k0, k1) = (project(1, 0), project(0, 1), project(1, 1));
        let (v0, v1) = (project(0, 2), project(1, 2));
        let s0 = (q1[0] * k0[0] + q1[1] * k0[1]) / 2.0f64.sqrt();
        let s1 = (q1[0] * k1[0] + q1[1] * k1[1]) / 2.0f64.sqrt();
        let m = s0.max(s1);
        let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
        let z = e0 + e1;
        for c in 0..2 {
            let want = (e0 * v0[c] + e1 * v1[c]) / z;
            assert!((y.data()[2 + c] - want).abs() < 1e-12, "c={c}");
        }
    }

    #[test]
    fn head_split_must_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            AttentionParams::<f32>::random(6, 4, &mut rng),
            Err(MixerError::HeadSplit { d: 6, n_head: 4 })
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in MixerKind::ALL {
            assert_eq!(kind.name().parse::<MixerKind>().unwrap(), kind);
        }
        assert!("mixr".parse::<MixerKind>().is_err());
    }
}
