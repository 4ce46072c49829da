use crate::real::{matmul, Real};

/// `y[n, m] = x[n, d] · w[d, m] + b[m]`.
pub fn linear_forward<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, d: usize, m: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * m);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    matmul(x, false, w, false, &mut y, n, d, m, true);
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    d: usize,
    m: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n * d];
    matmul(dy, false, w, true, &mut dx, n, m, d, false);
    let mut dw = vec![T::zero(); d * m];
    matmul(x, true, dy, false, &mut dw, d, n, m, false);
    let mut db = vec![T::zero(); m];
    for row in dy.chunks(m) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
    }
    (dx, dw, db)
}
