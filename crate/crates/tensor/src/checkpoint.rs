//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "IFTCKPT1"
//! meta_len u32      length of the JSON metadata block
//! meta     bytes    UTF-8 JSON
//! dtype    u8       0 = f32, 1 = f64
//! count    u32      number of parameters
//! repeated count times:
//!   name_len u32, name bytes
//!   ndim u32, dims u64 x ndim
//!   values   dtype width x prod(dims)
//! ```

use std::io::{Read, Write};

use serde_json::Value;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"IFTCKPT1";

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Checkpoint(msg.into()))
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    metadata: &Value,
    store: &ParamStore<T>,
) -> Result<()> {
    let meta = serde_json::to_vec(metadata).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(store.num_elements() * T::DTYPE.byte_width() + meta.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.push(match T::DTYPE {
        DType::F32 => 0,
        DType::F64 => 1,
    });
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut buf);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return corrupt("unexpected end of file");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads a checkpoint, converting stored values to `T` when the precision differs.
pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<(Value, ParamStore<T>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return corrupt("bad magic");
    }
    let meta_len = cur.u32()? as usize;
    let meta: Value = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| TensorError::Checkpoint(format!("metadata: {e}")))?;
    let dtype = match cur.take(1)?[0] {
        0 => DType::F32,
        1 => DType::F64,
        other => return corrupt(format!("unknown dtype tag {other}")),
    };
    let count = cur.u32()? as usize;
    let mut store = ParamStore::new(0);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * dtype.byte_width())?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect(),
        };
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != bytes.len() {
        return corrupt("trailing bytes after last parameter");
    }
    Ok((meta, store))
}
