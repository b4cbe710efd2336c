use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Layer, SirenField};
use crate::{Error, Real, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NPSN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout, little-endian: magic, version `u32`, omega0 `f32`, number of
/// widths `u32`, the widths as `u32`, then per layer the `out x in` weights
/// row-major and the biases, all `f32`.
pub fn encode_checkpoint<T: Real>(field: &SirenField<T>) -> Vec<u8> {
    let dims = field.dims();
    let mut out = Vec::with_capacity(16 + 4 * (dims.len() + field.num_params()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.omega0().to_f64_lossless() as f32).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in field.params() {
        out.extend_from_slice(&(v.to_f64_lossless() as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Checkpoint(format!("truncated checkpoint: missing {what} at byte {}", self.pos))
        })?;
        self.pos = end;
        Ok(slice.try_into().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SirenField<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>("magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a field checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let omega0 = r.f32("omega0")?;
    let count = r.u32("layer count")? as usize;
    if count > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {count}")));
    }
    let dims = (0..count).map(|_| r.u32("layer width").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let expected: usize = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
    if bytes.len() - r.pos != 4 * expected {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, dims {dims:?} need {}",
            bytes.len() - r.pos,
            4 * expected
        )));
    }
    let mut layers = Vec::with_capacity(dims.len().saturating_sub(1));
    for w in dims.windows(2) {
        let mut weight = Array2::<T>::zeros((w[1], w[0]));
        for v in weight.iter_mut() {
            *v = T::of(r.f32("weight")? as f64);
        }
        let mut bias = Array1::<T>::zeros(w[1]);
        for v in bias.iter_mut() {
            *v = T::of(r.f32("bias")? as f64);
        }
        layers.push(Layer { weight, bias });
    }
    let field = SirenField::from_layers(layers, omega0 as f64).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if !field.all_finite() {
        return Err(Error::Checkpoint("non-finite parameters".into()));
    }
    Ok(field)
}

pub fn save_checkpoint<T: Real>(field: &SirenField<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(field)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<SirenField<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
