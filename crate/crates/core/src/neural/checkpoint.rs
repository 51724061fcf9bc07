//! Parameter checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"DXKPARM1"
//! 8       32    SHA-256 of the model spec serialized as compact JSON
//! 40      8     tensor count n (u64 LE)
//! 48      ...   n records: rows (u64 LE), cols (u64 LE), rows·cols f64 LE values
//! ```

use std::io::{Read, Write};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{NeuralError, ParamStore, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DXKPARM1";

pub fn spec_hash(spec: &impl Serialize) -> Result<[u8; 32]> {
    let json = serde_json::to_vec(spec).map_err(|e| NeuralError::Checkpoint(format!("spec not serializable: {e}")))?;
    Ok(Sha256::digest(&json).into())
}

pub fn write_checkpoint<W: Write>(mut w: W, spec: &impl Serialize, store: &ParamStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&spec_hash(spec)?)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for t in store.tensors() {
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Loads values into `store`, which must have been built from the same spec.
pub fn read_checkpoint<R: Read>(mut r: R, spec: &impl Serialize, store: &mut ParamStore) -> Result<()> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if hash != spec_hash(spec)? {
        return Err(NeuralError::Checkpoint("checkpoint was written for a different model spec".into()));
    }
    let n = read_u64(&mut r)? as usize;
    if n != store.len() {
        return Err(NeuralError::Checkpoint(format!("{n} tensors, model has {}", store.len())));
    }
    let mut values = Vec::with_capacity(n);
    for id in store.ids() {
        let (rows, cols) = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
        if [rows, cols] != store.get(id).shape() {
            return Err(NeuralError::Checkpoint(format!("`{}`: stored {rows}x{cols}, expected {:?}", store.name(id), store.get(id).shape())));
        }
        let mut data = vec![0.0; rows * cols];
        let mut b = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        values.push(Tensor::new(rows, cols, data)?);
    }
    store.set_all(values)
}
