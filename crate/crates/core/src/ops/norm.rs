//! Per-channel batch normalization over (N, H, W).

use crate::par;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and report them for the running update.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Saved forward state for the backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Biased batch mean and variance, present in train mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

fn channel_stats<T: Real>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let m = T::lit((n * plane) as f64);
    let stats = par::map_range(c, |ch| {
        let mut sum = T::zero();
        for b in 0..n {
            sum += x[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
        let mean = sum / m;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &x[(b * c + ch) * plane..][..plane] {
                let d = v - mean;
                sq += d * d;
            }
        }
        (mean, sq / m)
    });
    stats.into_iter().unzip()
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`.
///
/// In eval mode `running` supplies mean and variance.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Real>(
    x: &[T],
    dims: (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    mode: BnMode,
    running: (&[T], &[T]),
    eps: f64,
) -> (Vec<T>, BnSaved<T>) {
    let (n, c, plane) = dims;
    let (mean, var, batch_stats) = match mode {
        BnMode::Train => {
            let (m, v) = channel_stats(x, n, c, plane);
            (m.clone(), v.clone(), Some((m, v)))
        }
        BnMode::Eval => (running.0.to_vec(), running.1.to_vec(), None),
    };
    let eps = T::lit(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut xhat, plane, |i, xh| {
        let ch = i % c;
        let src = &x[i * plane..(i + 1) * plane];
        for (o, &v) in xh.iter_mut().zip(src) {
            *o = (v - mean[ch]) * inv_std[ch];
        }
    });
    par::for_each_chunk(&mut y, plane, |i, yy| {
        let ch = i % c;
        for (o, &v) in yy.iter_mut().zip(&xhat[i * plane..(i + 1) * plane]) {
            *o = gamma[ch] * v + beta[ch];
        }
    });
    (
        y,
        BnSaved {
            xhat,
            inv_std,
            batch_stats,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(
    dy: &[T],
    dims: (usize, usize, usize),
    gamma: &[T],
    saved: &BnSaved<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, plane) = dims;
    let m = T::lit((n * plane) as f64);
    let sums = par::map_range(c, |ch| {
        let mut s_dy = T::zero();
        let mut s_dy_xhat = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for (g, xh) in dy[off..off + plane].iter().zip(&saved.xhat[off..off + plane]) {
                s_dy += *g;
                s_dy_xhat += *g * *xh;
            }
        }
        (s_dy, s_dy_xhat)
    });
    let dbeta: Vec<T> = sums.iter().map(|s| s.0).collect();
    let dgamma: Vec<T> = sums.iter().map(|s| s.1).collect();
    let train = saved.batch_stats.is_some();
    let mut dx = vec![T::zero(); dy.len()];
    par::for_each_chunk(&mut dx, plane, |i, out| {
        let ch = i % c;
        let scale = gamma[ch] * saved.inv_std[ch];
        let off = i * plane;
        if train {
            let mean_dy = dbeta[ch] / m;
            let mean_dy_xhat = dgamma[ch] / m;
            for j in 0..plane {
                out[j] = scale * (dy[off + j] - mean_dy - saved.xhat[off + j] * mean_dy_xhat);
            }
        } else {
            for j in 0..plane {
                out[j] = scale * dy[off + j];
            }
        }
    });
    (dx, dgamma, dbeta)
}

/// Exponential moving average update of running statistics.
pub fn update_running<T: Real>(running: &mut [T], batch: &[T], momentum: f64) {
    let mom = T::lit(momentum);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (T::one() - mom) * *r + mom * b;
    }
}
