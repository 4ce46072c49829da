//! `DPGW` weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DPGW" | version | entry count
//! per entry: name length | UTF-8 name | rank | dims... | f32 LE values
//! ```
//!
//! Trainable parameters come first, then buffers, each in store order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DPGW";
pub const VERSION: u32 = 1;
const FORMAT: &str = "DPGW";

/// One decoded tensor record.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let entries: Vec<(&str, &Tensor<T>)> = store
        .params()
        .map(|(k, p)| (k, &p.value))
        .chain(store.buffers())
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, entries.len())?;
    for (name, t) in entries {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| {
            Error::DimensionOverflow("entry size overflows address space".into())
        })?;
        if end > self.buf.len() {
            return Err(Error::Truncated {
                format: FORMAT,
                needed: end as u64,
                available: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            format: FORMAT,
            version,
        });
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Malformed {
                format: FORMAT,
                detail: format!("entry name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::DimensionOverflow(format!("`{name}` dims {dims:?}")))?;
        let raw = r.take(numel * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(WeightEntry { name, dims, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed {
            format: FORMAT,
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(entries)
}

/// Overwrites every parameter and buffer of `store` from `entries`.
///
/// The entry set must match the store exactly; the first differing name or
/// shape is reported.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, entries: &[WeightEntry]) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = store
        .params()
        .map(|(k, p)| (k.to_string(), p.value.shape().to_vec()))
        .chain(store.buffers().map(|(k, b)| (k.to_string(), b.shape().to_vec())))
        .collect();
    for (i, (name, shape)) in expected.iter().enumerate() {
        let Some(e) = entries.get(i) else {
            return Err(Error::ParameterMismatch {
                name: name.clone(),
                detail: "missing from weight file".into(),
            });
        };
        if &e.name != name {
            return Err(Error::ParameterMismatch {
                name: name.clone(),
                detail: format!("weight file has `{}` in its place", e.name),
            });
        }
        if &e.dims != shape {
            return Err(Error::ParameterMismatch {
                name: name.clone(),
                detail: format!("shape {:?} in file, {shape:?} expected", e.dims),
            });
        }
    }
    if let Some(extra) = entries.get(expected.len()) {
        return Err(Error::ParameterMismatch {
            name: extra.name.clone(),
            detail: "not part of the configured architecture".into(),
        });
    }
    for e in entries {
        let data = e.values.iter().map(|&v| T::from_f32(v)).collect();
        let t = Tensor::new(e.dims.clone(), data)?;
        if let Some(p) = store.param_mut(&e.name) {
            p.value = t;
        } else {
            *store.buffer_mut(&e.name)? = t;
        }
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<WeightEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
