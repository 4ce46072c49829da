use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;

/// Square max-pooling window. The backward pass routes each output gradient
/// to the first maximum of its window in row-major order.
#[derive(Clone, Copy, Debug)]
pub struct PoolDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl PoolDims {
    pub fn new(x: &[usize], k: usize, stride: usize) -> Result<Self> {
        let [n, c, h, w] = x[..] else {
            return Err(Error::shape("maxpool2d", format!("input must be rank 4, got {x:?}")));
        };
        if k == 0 || stride == 0 {
            return Err(Error::invalid("maxpool2d", "window and stride must be >= 1"));
        }
        if h % stride != 0 || w % stride != 0 || h < k || w < k {
            return Err(Error::shape(
                "maxpool2d",
                format!("extents {h}x{w} not divisible by stride {stride} (window {k})"),
            ));
        }
        Ok(PoolDims {
            n,
            c,
            h,
            w,
            k,
            stride,
            ho: (h - k) / stride + 1,
            wo: (w - k) / stride + 1,
        })
    }
}

/// Returns pooled values and, per output, the flat input index it came from.
pub fn maxpool_forward<T: Real>(x: &[T], d: &PoolDims) -> (Vec<T>, Vec<usize>) {
    let out_plane = d.ho * d.wo;
    let mut packed = vec![(T::zero(), 0usize); d.n * d.c * out_plane];
    par::for_each_chunk(&mut packed, out_plane, |plane, out| {
        let base = plane * d.h * d.w;
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let mut best = base + oy * d.stride * d.w + ox * d.stride;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let i = base + (oy * d.stride + ky) * d.w + ox * d.stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out[oy * d.wo + ox] = (x[best], best);
            }
        }
    });
    packed.into_iter().unzip()
}

pub fn maxpool_backward<T: Real>(dy: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_window() {
        let d = PoolDims::new(&[1, 1, 2, 2], 2, 2).unwrap();
        let (y, idx) = maxpool_forward(&[1.0f32, 2.0, 3.0, 4.0], &d);
        assert_eq!(y, vec![4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn ties_route_to_first_in_scan_order() {
        let d = PoolDims::new(&[1, 1, 2, 2], 2, 2).unwrap();
        let (_, idx) = maxpool_forward(&[0.0f64, 5.0, 5.0, 5.0], &d);
        assert_eq!(idx, vec![1]);
        let dx = maxpool_backward(&[2.0f64], &idx, 4);
        assert_eq!(dx, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_odd_extent() {
        assert!(PoolDims::new(&[1, 1, 5, 4], 2, 2).is_err());
    }
}
