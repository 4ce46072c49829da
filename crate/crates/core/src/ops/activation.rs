use crate::real::Real;

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

pub fn relu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn sigmoid<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Logistic function, evaluated so that neither branch overflows.
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Backward through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &[T], dy: &[T]) -> Vec<T> {
    y.iter()
        .zip(dy)
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect()
}
