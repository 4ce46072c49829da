//! Guided input channels from a complex chip pair:
//! `I1 = |S_VH|`, `I2 = |S_VV|`, `I3 = |S_VV * conj(S_VH)|`.

use crate::error::{Error, Result};
use crate::ops::resize::bilinear_resize;
use crate::tensor::Tensor;

use super::chip::ComplexChipPair;

/// Which of the three branches to produce, in order (I1, I2, I3).
pub type BranchMask = [bool; 3];

pub const ALL_BRANCHES: BranchMask = [true, true, true];

/// Unnormalized channels at the chip's own resolution. Channels that were
/// not requested are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTriple {
    pub height: usize,
    pub width: usize,
    pub i1: Vec<f32>,
    pub i2: Vec<f32>,
    pub i3: Vec<f32>,
    pub label: Option<usize>,
    pub id: String,
}

/// Network-ready channels, each `size x size` in `[0, 1]`. Channels that
/// were not requested are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedTriple {
    pub size: usize,
    pub i1: Vec<f32>,
    pub i2: Vec<f32>,
    pub i3: Vec<f32>,
    pub label: Option<usize>,
    pub id: String,
}

impl GuidedTriple {
    pub fn channel(&self, branch: usize) -> &[f32] {
        match branch {
            0 => &self.i1,
            1 => &self.i2,
            _ => &self.i3,
        }
    }
}

pub fn derive_channels(pair: &ComplexChipPair) -> Result<RawTriple> {
    derive_selected(pair, ALL_BRANCHES)
}

/// Derives only the requested channels. `S_VH` is not touched unless I1 or
/// I3 is requested.
pub fn derive_selected(pair: &ComplexChipPair, mask: BranchMask) -> Result<RawTriple> {
    let n = pair.height * pair.width;
    if n == 0 {
        return Err(Error::invalid("derive_channels", "empty chip"));
    }
    if pair.svv.len() != n || ((mask[0] || mask[2]) && pair.svh.len() != n) {
        return Err(Error::shape(
            "derive_channels",
            format!(
                "VH/VV planes ({} / {} samples) are not co-registered {}x{}",
                pair.svh.len(),
                pair.svv.len(),
                pair.height,
                pair.width
            ),
        ));
    }
    let i1 = if mask[0] {
        pair.svh.iter().map(|c| c.norm()).collect()
    } else {
        Vec::new()
    };
    let i2 = if mask[1] {
        pair.svv.iter().map(|c| c.norm()).collect()
    } else {
        Vec::new()
    };
    let i3 = if mask[2] {
        pair.svv
            .iter()
            .zip(&pair.svh)
            .map(|(vv, vh)| (vv * vh.conj()).norm())
            .collect()
    } else {
        Vec::new()
    };
    Ok(RawTriple {
        height: pair.height,
        width: pair.width,
        i1,
        i2,
        i3,
        label: pair.label,
        id: pair.id.clone(),
    })
}

/// Divides by the channel's own maximum; an all-zero channel stays zero.
pub fn normalize_max(channel: &[f32]) -> Vec<f32> {
    let max = channel.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        channel.iter().map(|&v| v / max).collect()
    } else {
        vec![0.0; channel.len()]
    }
}

fn resize_channel(channel: &[f32], h: usize, w: usize, target: usize) -> Result<Vec<f32>> {
    if channel.is_empty() {
        return Ok(Vec::new());
    }
    let img = Tensor::new(vec![1, h, w], normalize_max(channel))?;
    Ok(bilinear_resize(&img, target, target)?.into_data())
}

pub fn normalize_and_resize(raw: &RawTriple, target: usize) -> Result<GuidedTriple> {
    if raw.height == 0 || raw.width == 0 || target == 0 {
        return Err(Error::invalid("normalize_and_resize", "extents must be positive"));
    }
    let (h, w) = (raw.height, raw.width);
    Ok(GuidedTriple {
        size: target,
        i1: resize_channel(&raw.i1, h, w, target)?,
        i2: resize_channel(&raw.i2, h, w, target)?,
        i3: resize_channel(&raw.i3, h, w, target)?,
        label: raw.label,
        id: raw.id.clone(),
    })
}

/// Chip to network input in one step.
pub fn prepare(pair: &ComplexChipPair, target: usize, mask: BranchMask) -> Result<GuidedTriple> {
    normalize_and_resize(&derive_selected(pair, mask)?, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex32;

    fn single(vh: Complex32, vv: Complex32) -> ComplexChipPair {
        ComplexChipPair::new(1, 1, vec![vh], vec![vv], "px").unwrap()
    }

    #[test]
    fn worked_pixel() {
        let raw = derive_channels(&single(Complex32::new(1.0, -2.0), Complex32::new(3.0, 4.0))).unwrap();
        assert!((raw.i1[0] - 5f32.sqrt()).abs() < 1e-6);
        assert!((raw.i2[0] - 5.0).abs() < 1e-6);
        assert!((raw.i3[0] - 125f32.sqrt()).abs() < 1e-5);
        assert!((raw.i3[0] - raw.i1[0] * raw.i2[0]).abs() < 1e-5);
    }

    #[test]
    fn zero_vh_zeroes_i1_and_i3() {
        let raw = derive_channels(&single(Complex32::new(0.0, 0.0), Complex32::new(2.0, 1.0))).unwrap();
        assert_eq!(raw.i1[0], 0.0);
        assert_eq!(raw.i3[0], 0.0);
    }

    #[test]
    fn constant_and_zero_channels() {
        assert_eq!(normalize_max(&[7.0; 5]), vec![1.0; 5]);
        assert_eq!(normalize_max(&[0.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn unselected_channels_are_empty() {
        let raw = derive_selected(&single(Complex32::new(1.0, 0.0), Complex32::new(1.0, 0.0)), [false, true, false]).unwrap();
        assert!(raw.i1.is_empty() && raw.i3.is_empty());
        assert_eq!(raw.i2.len(), 1);
    }
}
