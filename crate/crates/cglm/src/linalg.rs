//! Flat-slice matrix kernels.
//!
//! One accumulating kernel (`mm_acc`, row-parallel axpy form) carries all
//! three product variants; the transposed variants materialize the
//! transpose first so the inner loop stays contiguous. Every output row is
//! produced by exactly one task with a fixed k-order, so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::tensor::Element;

/// Below this many multiply-adds the rayon dispatch costs more than it buys.
const PAR_THRESHOLD: usize = 32 * 1024;

const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 16;

/// y[m,n] += a[m,k] · b[k,n]
///
/// 4x32 register tiles with the k loop innermost: each b strip is
/// loaded once per four output rows and the partial sums never leave
/// registers until the tile is done. Per output element the additions
/// run in ascending-k order with the prior y value added last; the
/// order is fixed, so results are bit-identical across runs and thread
/// counts.
pub fn mm_acc<E: Element>(a: &[E], b: &[E], y: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    let block = |i0: usize, yblock: &mut [E]| {
        let rows = yblock.len() / n;
        let mut r = 0;
        while r + TILE_ROWS <= rows {
            let i = i0 + r;
            let a0 = &a[i * k..(i + 1) * k];
            let a1 = &a[(i + 1) * k..(i + 2) * k];
            let a2 = &a[(i + 2) * k..(i + 3) * k];
            let a3 = &a[(i + 3) * k..(i + 4) * k];
            let mut j0 = 0;
            while j0 + TILE_COLS <= n {
                let mut acc0 = [E::zero(); TILE_COLS];
                let mut acc1 = [E::zero(); TILE_COLS];
                let mut acc2 = [E::zero(); TILE_COLS];
                let mut acc3 = [E::zero(); TILE_COLS];
                for p in 0..k {
                    let bstrip = &b[p * n + j0..p * n + j0 + TILE_COLS];
                    for j in 0..TILE_COLS {
                        let bj = bstrip[j];
                        acc0[j] = acc0[j] + a0[p] * bj;
                        acc1[j] = acc1[j] + a1[p] * bj;
                        acc2[j] = acc2[j] + a2[p] * bj;
                        acc3[j] = acc3[j] + a3[p] * bj;
                    }
                }
                let accs = [&acc0, &acc1, &acc2, &acc3];
                for (t, acc) in accs.into_iter().enumerate() {
                    let yrow = &mut yblock[(r + t) * n + j0..(r + t) * n + j0 + TILE_COLS];
                    for j in 0..TILE_COLS {
                        yrow[j] = yrow[j] + acc[j];
                    }
                }
                j0 += TILE_COLS;
            }
            if j0 < n {
                // ragged column tail, same accumulation order
                for (t, arow) in [a0, a1, a2, a3].into_iter().enumerate() {
                    let yrow = &mut yblock[(r + t) * n..(r + t) * n + n];
                    for j in j0..n {
                        let mut s = E::zero();
                        for p in 0..k {
                            s = s + arow[p] * b[p * n + j];
                        }
                        yrow[j] = yrow[j] + s;
                    }
                }
            }
            r += TILE_ROWS;
        }
        while r < rows {
            let i = i0 + r;
            let arow = &a[i * k..(i + 1) * k];
            let yrow = &mut yblock[r * n..(r + 1) * n];
            for j in 0..n {
                let mut s = E::zero();
                for p in 0..k {
                    s = s + arow[p] * b[p * n + j];
                }
                yrow[j] = yrow[j] + s;
            }
            r += 1;
        }
    };
    if m * k * n < PAR_THRESHOLD {
        block(0, y);
    } else {
        // 16-row chunks: parallel grain, each handled by the tile core
        y.par_chunks_mut(16 * n)
            .enumerate()
            .for_each(|(ci, yc)| block(ci * 16, yc));
    }
}

/// y[m,n] += a[m,k] · b[n,k]ᵀ
pub fn mm_nt_acc<E: Element>(a: &[E], b: &[E], y: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(b.len(), n * k);
    let bt = transpose(b, n, k);
    mm_acc(a, &bt, y, m, k, n);
}

/// y[k,n] += a[m,k]ᵀ · b[m,n]
pub fn mm_tn_acc<E: Element>(a: &[E], b: &[E], y: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    let at = transpose(a, m, k);
    mm_acc(&at, b, y, k, m, n);
}

/// Row-major transpose of a [rows, cols] slice.
pub fn transpose<E: Element>(x: &[E], rows: usize, cols: usize) -> Vec<E> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![E::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Dot product with fixed 4-lane unrolling. The lane split is part of the
/// arithmetic contract: reductions stay bit-identical across runs.
#[inline]
pub fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = E::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += c · x
#[inline]
pub fn axpy<E: Element>(c: E, x: &[E], y: &mut [E]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + c * xi;
    }
}
