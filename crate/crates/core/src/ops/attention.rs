//! Embedded-Gaussian non-local attention over spatial positions.
//!
//! For one sample with projections `phi`, `theta`, `g` of shape `[c, p]`
//! (channels by flattened positions):
//!
//! ```text
//! A[i, j] = softmax_j( sum_c phi[c, i] * theta[c, j] )
//! y[c, i] = sum_j A[i, j] * g[c, j]
//! ```

use crate::par;
use crate::real::{matmul, Real};

use super::softmax::softmax_rows_inplace;

/// Row-stochastic `[p, p]` attention matrix for one sample.
pub fn attention_weights<T: Real>(phi: &[T], theta: &[T], c: usize, p: usize) -> Vec<T> {
    let mut a = vec![T::zero(); p * p];
    matmul(phi, true, theta, false, &mut a, p, c, p, false);
    softmax_rows_inplace(&mut a, p);
    a
}

/// Returns the response `[n, c, p]` and the attention matrices `[n, p, p]`.
pub fn non_local_forward<T: Real>(
    phi: &[T],
    theta: &[T],
    g: &[T],
    n: usize,
    c: usize,
    p: usize,
) -> (Vec<T>, Vec<T>) {
    let per = c * p;
    let parts = par::map_range(n, |b| {
        let s = b * per..(b + 1) * per;
        let a = attention_weights(&phi[s.clone()], &theta[s.clone()], c, p);
        let mut y = vec![T::zero(); per];
        matmul(&g[s], false, &a, true, &mut y, c, p, p, false);
        (y, a)
    });
    let mut y = Vec::with_capacity(n * per);
    let mut attn = Vec::with_capacity(n * p * p);
    for (yy, aa) in parts {
        y.extend(yy);
        attn.extend(aa);
    }
    (y, attn)
}

/// Returns `(dphi, dtheta, dg)`.
#[allow(clippy::too_many_arguments)]
pub fn non_local_backward<T: Real>(
    phi: &[T],
    theta: &[T],
    g: &[T],
    attn: &[T],
    dy: &[T],
    n: usize,
    c: usize,
    p: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let per = c * p;
    let parts = par::map_range(n, |b| {
        let s = b * per..(b + 1) * per;
        let a = &attn[b * p * p..(b + 1) * p * p];
        let dyb = &dy[s.clone()];

        let mut dg = vec![T::zero(); per];
        matmul(dyb, false, a, false, &mut dg, c, p, p, false);

        let mut ds = vec![T::zero(); p * p];
        matmul(dyb, true, &g[s.clone()], false, &mut ds, p, c, p, false);
        for (drow, arow) in ds.chunks_mut(p).zip(a.chunks(p)) {
            let dot: T = drow.iter().zip(arow).map(|(x, y)| *x * *y).sum();
            for (d, &av) in drow.iter_mut().zip(arow) {
                *d = av * (*d - dot);
            }
        }

        let mut dphi = vec![T::zero(); per];
        matmul(&theta[s.clone()], false, &ds, true, &mut dphi, c, p, p, false);
        let mut dtheta = vec![T::zero(); per];
        matmul(&phi[s], false, &ds, false, &mut dtheta, c, p, p, false);
        (dphi, dtheta, dg)
    });
    let mut dphi = Vec::with_capacity(n * per);
    let mut dtheta = Vec::with_capacity(n * per);
    let mut dg = Vec::with_capacity(n * per);
    for (a, b, c) in parts {
        dphi.extend(a);
        dtheta.extend(b);
        dg.extend(c);
    }
    (dphi, dtheta, dg)
}
