//! Versioned binary checkpoint of a trained network.
//!
//! Layout, little-endian: magic `DDCLNET1`, `u32` version, then `u64` M, N, K,
//! τ, filters, kernel, hidden; `f64` P₀; `u64` constellation order, seed,
//! iterations; `u64` parameter count followed by that many `f64` values in
//! [`NetworkParams`] order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{NetShape, NetworkParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"DDCLNET1";
const VERSION: u32 = 1;

/// Everything besides the weights needed to reuse a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub power_budget: f64,
    pub order: usize,
    pub seed: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub params: NetworkParams<T>,
    pub meta: CheckpointMeta,
}

pub fn write_checkpoint<T: Real>(w: &mut impl Write, ckpt: &Checkpoint<T>) -> Result<()> {
    let s = ckpt.params.shape();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    for v in [s.m, s.n, s.k, s.tau, s.filters, s.kernel, s.hidden] {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    w.write_f64::<LittleEndian>(ckpt.meta.power_budget)?;
    w.write_u64::<LittleEndian>(ckpt.meta.order as u64)?;
    w.write_u64::<LittleEndian>(ckpt.meta.seed)?;
    w.write_u64::<LittleEndian>(ckpt.meta.iterations)?;
    w.write_u64::<LittleEndian>(ckpt.params.len() as u64)?;
    for v in ckpt.params.values() {
        w.write_f64::<LittleEndian>(v.as_f64())?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.read_u64::<LittleEndian>()? as usize;
    }
    let [m, n, k, tau, filters, kernel, hidden] = dims;
    let shape = NetShape::with_sizes(m, n, k, tau, filters, kernel, hidden)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    let meta = CheckpointMeta {
        power_budget: r.read_f64::<LittleEndian>()?,
        order: r.read_u64::<LittleEndian>()? as usize,
        seed: r.read_u64::<LittleEndian>()?,
        iterations: r.read_u64::<LittleEndian>()?,
    };
    let count = r.read_u64::<LittleEndian>()? as usize;
    if count != shape.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, shape needs {}",
            shape.param_count()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(T::of(r.read_f64::<LittleEndian>()?));
    }
    Ok(Checkpoint {
        params: NetworkParams::from_values(shape, values)?,
        meta,
    })
}
