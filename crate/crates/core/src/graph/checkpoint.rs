//! Binary checkpoint format.
//!
//! All integers are little-endian `u64` unless noted.
//!
//! ```text
//! magic        8 bytes  "ACPSEGCK"
//! version      u32      1
//! flags        u32      bit 0: Adam moments present
//! count        u64      number of named tensors
//! per tensor:
//!   name_len   u64
//!   name       name_len bytes, UTF-8
//!   rank       u64
//!   dims       rank x u64
//!   data       numel x f64 (IEEE-754 little-endian)
//!   if flag 0: step_count u64, adam_m numel x f64, adam_v numel x f64
//! ```
//!
//! Trainable parameters and buffers (running statistics, kernel offsets) are
//! stored alike; trainability is a property of the model that loads them.

use std::io::{Read, Write};

use crate::graph::{GraphError, ParamStore, Tensor};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"ACPSEGCK";
pub const VERSION: u32 = 1;
const FLAG_MOMENTS: u32 = 1;

/// One decoded checkpoint entry.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub moments: Option<(u64, Vec<f64>, Vec<f64>)>,
}

fn io_err(e: std::io::Error) -> GraphError {
    GraphError::Checkpoint(e.to_string())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<(), GraphError> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_f64s<W: Write, T: Real>(w: &mut W, xs: &[T]) -> Result<(), GraphError> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

fn get<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], GraphError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64, GraphError> {
    Ok(u64::from_le_bytes(get::<8, R>(r)?))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, GraphError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_checkpoint<T: Real, W: Write>(
    store: &ParamStore<T>,
    w: &mut W,
    with_moments: bool,
) -> Result<(), GraphError> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let flags = if with_moments { FLAG_MOMENTS } else { 0 };
    w.write_all(&flags.to_le_bytes()).map_err(io_err)?;
    put_u64(w, store.len() as u64)?;
    for (_, p) in store.iter() {
        put_u64(w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes()).map_err(io_err)?;
        let shape = p.tensor.shape();
        put_u64(w, shape.len() as u64)?;
        for &d in shape {
            put_u64(w, d as u64)?;
        }
        put_f64s(w, p.tensor.data())?;
        if with_moments {
            put_u64(w, p.step_count)?;
            put_f64s(w, &p.adam_m)?;
            put_f64s(w, &p.adam_v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<CheckpointEntry>, GraphError> {
    let magic = get::<8, R>(r)?;
    if &magic != MAGIC {
        return Err(GraphError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(get::<4, R>(r)?);
    if version != VERSION {
        return Err(GraphError::Checkpoint(format!("unsupported version {version}")));
    }
    let flags = u32::from_le_bytes(get::<4, R>(r)?);
    let count = get_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = get_u64(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|e| GraphError::Checkpoint(format!("parameter name: {e}")))?;
        let rank = get_u64(r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().product();
        let data = get_f64s(r, numel)?;
        let moments = if flags & FLAG_MOMENTS != 0 {
            let step = get_u64(r)?;
            Some((step, get_f64s(r, numel)?, get_f64s(r, numel)?))
        } else {
            None
        };
        out.push(CheckpointEntry {
            name,
            shape,
            data,
            moments,
        });
    }
    Ok(out)
}

/// Loads entries into a store built with the same architecture. Every stored
/// tensor must be present in the checkpoint with a matching shape.
pub fn load_into<T: Real>(
    store: &mut ParamStore<T>,
    entries: &[CheckpointEntry],
) -> Result<(), GraphError> {
    for e in entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| GraphError::Checkpoint(format!("unknown parameter {:?}", e.name)))?;
        let p = store.get_mut(id);
        if p.tensor.shape() != e.shape.as_slice() {
            return Err(GraphError::Checkpoint(format!(
                "{:?}: shape {:?} in file, {:?} in model",
                e.name,
                e.shape,
                p.tensor.shape()
            )));
        }
        let t = Tensor::<T>::from_f64(&e.shape, &e.data)?;
        p.tensor.data_mut().copy_from_slice(t.data());
        if let Some((step, m, v)) = &e.moments {
            p.step_count = *step;
            p.adam_m = m.iter().map(|&x| T::lit(x)).collect();
            p.adam_v = v.iter().map(|&x| T::lit(x)).collect();
        }
    }
    if entries.len() != store.len() {
        return Err(GraphError::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    Ok(())
}
