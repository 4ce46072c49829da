//! 2-D cross-correlation via im2col + GEMM.

use crate::error::{Error, Result};
use crate::par;
use crate::real::{matmul, Real};

/// Stride, zero padding and dilation shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const SAME_3X3: ConvGeom = ConvGeom {
        stride: 1,
        padding: 1,
        dilation: 1,
    };
    pub const DILATED_3X3: ConvGeom = ConvGeom {
        stride: 1,
        padding: 2,
        dilation: 2,
    };
    pub const POINTWISE: ConvGeom = ConvGeom {
        stride: 1,
        padding: 0,
        dilation: 1,
    };

    /// Output extent along one axis: `(in + 2p - d(k-1) - 1)/s + 1`.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("stride {} and dilation {} must be >= 1", self.stride, self.dilation),
            ));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::shape(
                "conv2d",
                format!("kernel span {span} exceeds padded extent {padded}"),
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

/// Static description of one conv call.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl ConvDims {
    pub fn new(x: &[usize], w: &[usize], geom: ConvGeom) -> Result<Self> {
        let [n, cin, h, wd] = x[..] else {
            return Err(Error::shape("conv2d", format!("input must be rank 4, got {x:?}")));
        };
        let [cout, wcin, kh, kw] = w[..] else {
            return Err(Error::shape("conv2d", format!("weight must be rank 4, got {w:?}")));
        };
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: input has {cin}, weight expects {wcin}"),
            ));
        }
        let ho = geom.out_extent(h, kh)?;
        let wo = geom.out_extent(wd, kw)?;
        Ok(ConvDims {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
            geom,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }
}

/// Unfolds one sample `x[cin, h, w]` into `cols[cin*kh*kw, ho*wo]`.
fn im2col<T: Real>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let g = d.geom;
    let p = d.out_plane();
    for ci in 0..d.cin {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds `cols` back onto one sample, accumulating overlapping taps.
fn col2im<T: Real>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    let g = d.geom;
    let p = d.out_plane();
    for ci in 0..d.cin {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * d.h + iy as usize) * d.w..][..d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let p = d.out_plane();
    let k = d.patch();
    let in_per = d.cin * d.h * d.w;
    let mut out = vec![T::zero(); d.n * d.cout * p];
    par::for_each_chunk(&mut out, d.cout * p, |n, y| {
        let mut cols = vec![T::zero(); k * p];
        im2col(&x[n * in_per..(n + 1) * in_per], d, &mut cols);
        if let Some(b) = b {
            for (co, plane) in y.chunks_mut(p).enumerate() {
                plane.fill(b[co]);
            }
        }
        matmul(w, false, &cols, false, y, d.cout, k, p, b.is_some());
    });
    out
}

/// Gradients of a conv call. Entries are `None` when not requested.
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: &ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_dx, need_dw, need_db) = need;
    let p = d.out_plane();
    let k = d.patch();
    let in_per = d.cin * d.h * d.w;
    let out_per = d.cout * p;

    let db = need_db.then(|| {
        let mut db = vec![T::zero(); d.cout];
        for n in 0..d.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let base = n * out_per + co * p;
                *acc += dy[base..base + p].iter().copied().sum::<T>();
            }
        }
        db
    });

    let dw = need_dw.then(|| {
        // per-sample partials, reduced in sample order
        let partials = par::map_range(d.n, |n| {
            let mut cols = vec![T::zero(); k * p];
            im2col(&x[n * in_per..(n + 1) * in_per], d, &mut cols);
            let mut part = vec![T::zero(); d.cout * k];
            matmul(
                &dy[n * out_per..(n + 1) * out_per],
                false,
                &cols,
                true,
                &mut part,
                d.cout,
                p,
                k,
                false,
            );
            part
        });
        let mut dw = vec![T::zero(); d.cout * k];
        for part in partials {
            dw.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        dw
    });

    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); d.n * in_per];
        par::for_each_chunk(&mut dx, in_per, |n, dxn| {
            let mut dcols = vec![T::zero(); k * p];
            matmul(
                w,
                true,
                &dy[n * out_per..(n + 1) * out_per],
                false,
                &mut dcols,
                k,
                d.cout,
                p,
                false,
            );
            col2im(&dcols, d, dxn);
        });
        dx
    });

    ConvGrads { dx, dw, db }
}
