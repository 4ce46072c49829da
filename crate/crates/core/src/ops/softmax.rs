use crate::real::Real;

/// Splits a shape around `axis` into (outer, axis length, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along `axis` with max subtraction.
pub fn softmax<T: Real>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                y[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                y[at(k)] /= sum;
            }
        }
    }
    y
}

/// `dx = y * (dy - sum(dy * y))` along `axis`.
pub fn softmax_backward<T: Real>(y: &[T], dy: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| y[at(k)] * dy[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] = y[at(k)] * (dy[at(k)] - dot);
            }
        }
    }
    dx
}

/// Row-wise softmax in place over a `rows x cols` matrix.
pub fn softmax_rows_inplace<T: Real>(m: &mut [T], cols: usize) {
    for row in m.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean negative log-likelihood over the batch; also returns the row
/// probabilities for the backward pass.
pub fn cross_entropy<T: Real>(logits: &[T], k: usize, labels: &[usize]) -> (T, Vec<T>) {
    let mut probs = logits.to_vec();
    let mut total = T::zero();
    for (row, &label) in probs.chunks_mut(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    (total / T::lit(labels.len() as f64), probs)
}

pub fn cross_entropy_backward<T: Real>(probs: &[T], k: usize, labels: &[usize], g: T) -> Vec<T> {
    let scale = g / T::lit(labels.len() as f64);
    let mut d = probs.to_vec();
    for (row, &label) in d.chunks_mut(k).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_input_uniform_output() {
        let y = softmax(&[0.0f64; 3], &[3], 0);
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn middle_axis() {
        // shape [2, 3, 2]; softmax along axis 1
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = softmax(&x, &[2, 3, 2], 1);
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|k| y[(o * 3 + k) * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = cross_entropy(&[0.0f64; 6], 3, &[0, 2]);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }
}
