//! Co-registered VV/VH complex chips and the `SARC` file format.
//!
//! ```text
//! "SARC" | version u32 | H u32 | W u32 | VH plane | VV plane
//! ```
//!
//! Each plane holds `H * W` complex samples as (f32 real, f32 imag),
//! row-major, little-endian.

use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SARC";
pub const VERSION: u32 = 1;
const FORMAT: &str = "SARC";
const HEADER_LEN: u64 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexChipPair {
    pub height: usize,
    pub width: usize,
    /// Cross-polarized channel, S_VH.
    pub svh: Vec<Complex32>,
    /// Co-polarized channel, S_VV.
    pub svv: Vec<Complex32>,
    pub label: Option<usize>,
    pub id: String,
}

impl ComplexChipPair {
    pub fn new(
        height: usize,
        width: usize,
        svh: Vec<Complex32>,
        svv: Vec<Complex32>,
        id: impl Into<String>,
    ) -> Result<Self> {
        let pair = ComplexChipPair {
            height,
            width,
            svh,
            svv,
            label: None,
            id: id.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if n == 0 {
            return Err(Error::invalid("chip", "extents must be positive"));
        }
        if self.svh.len() != n || self.svv.len() != n {
            return Err(Error::shape(
                "chip",
                format!(
                    "VH has {} samples, VV has {}, {}x{} needs {n}",
                    self.svh.len(),
                    self.svv.len(),
                    self.height,
                    self.width
                ),
            ));
        }
        let finite = |c: &Complex32| c.re.is_finite() && c.im.is_finite();
        if !self.svh.iter().all(finite) || !self.svv.iter().all(finite) {
            return Err(Error::invalid("chip", format!("`{}` has non-finite samples", self.id)));
        }
        Ok(())
    }
}

fn plane_bytes(height: usize, width: usize) -> Result<u64> {
    (height as u64)
        .checked_mul(width as u64)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::DimensionOverflow(format!("{height}x{width} chip")))
}

pub fn encode_chip(pair: &ComplexChipPair) -> Result<Vec<u8>> {
    pair.validate()?;
    let total = plane_bytes(pair.height, pair.width)?;
    let h = u32::try_from(pair.height)
        .map_err(|_| Error::DimensionOverflow(format!("height {}", pair.height)))?;
    let w = u32::try_from(pair.width)
        .map_err(|_| Error::DimensionOverflow(format!("width {}", pair.width)))?;
    let mut out = Vec::with_capacity(total as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for c in pair.svh.iter().chain(&pair.svv) {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    Ok(out)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode_chip(bytes: &[u8], id: impl Into<String>) -> Result<ComplexChipPair> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            format: FORMAT,
            needed: HEADER_LEN,
            available: bytes.len() as u64,
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(Error::Truncated {
            format: FORMAT,
            needed: HEADER_LEN,
            available: bytes.len() as u64,
        });
    }
    let version = le_u32(&bytes[4..]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            format: FORMAT,
            version,
        });
    }
    let height = le_u32(&bytes[8..]) as usize;
    let width = le_u32(&bytes[12..]) as usize;
    if height == 0 || width == 0 {
        return Err(Error::Malformed {
            format: FORMAT,
            detail: format!("zero extent {height}x{width}"),
        });
    }
    let needed = plane_bytes(height, width)?;
    let available = bytes.len() as u64;
    if available < needed {
        return Err(Error::Truncated {
            format: FORMAT,
            needed,
            available,
        });
    }
    if available > needed {
        return Err(Error::Malformed {
            format: FORMAT,
            detail: format!("{} trailing bytes", available - needed),
        });
    }
    let n = height * width;
    let mut samples = bytes[HEADER_LEN as usize..]
        .chunks_exact(8)
        .map(|c| Complex32::new(f32::from_le_bytes([c[0], c[1], c[2], c[3]]), f32::from_le_bytes([c[4], c[5], c[6], c[7]])));
    let svh: Vec<Complex32> = samples.by_ref().take(n).collect();
    let svv: Vec<Complex32> = samples.collect();
    ComplexChipPair::new(height, width, svh, svv, id)
}

pub fn write_chip(path: &Path, pair: &ComplexChipPair) -> Result<()> {
    let bytes = encode_chip(pair)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_chip(path: &Path) -> Result<ComplexChipPair> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_chip(&bytes, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> ComplexChipPair {
        let svh = (0..6).map(|i| Complex32::new(i as f32, -0.5 * i as f32)).collect();
        let svv = (0..6).map(|i| Complex32::new(1e-30 * i as f32, 3.0)).collect();
        ComplexChipPair::new(2, 3, svh, svv, "p").unwrap()
    }

    #[test]
    fn round_trip_bitwise() {
        let p = pair();
        let back = decode_chip(&encode_chip(&p).unwrap(), "p").unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn diagnostics_are_distinct() {
        let bytes = encode_chip(&pair()).unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        let e = decode_chip(&bad, "x").unwrap_err();
        assert!(e.to_string().contains("bad magic"), "{e}");

        let e = decode_chip(&bytes[..bytes.len() - 3], "x").unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");

        let mut huge = bytes[..16].to_vec();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        let e = decode_chip(&huge, "x").unwrap_err();
        assert!(e.to_string().contains("dimension overflow"), "{e}");
    }

    #[test]
    fn mismatched_planes_rejected() {
        let e = ComplexChipPair::new(2, 2, vec![Complex32::default(); 4], vec![Complex32::default(); 3], "m");
        assert!(e.is_err());
    }
}
