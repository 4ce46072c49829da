use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Source coordinate and weights for half-pixel-centre sampling.
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

// exact when a == b, so constant images stay constant
fn lerp<T: Real>(a: T, b: T, f: T) -> T {
    a + (b - a) * f
}

/// Bilinear resize of a `[C, H, W]` image with `align_corners = false`
/// semantics (half-pixel centres, edge clamping).
pub fn bilinear_resize<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::shape(
            "bilinear_resize",
            format!("expected [C, H, W], got {:?}", img.shape()),
        ));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "target extents must be positive"));
    }
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = T::lit(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::lit(fx);
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                let bot = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                out.push(lerp(top, bot, fy));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}
