//! `MDNT` checkpoint container.
//!
//! ```text
//! magic  "MDNT"
//! u32    format version
//! u32    byte length of the spec JSON, then the canonical JSON text
//! u32    tensor count
//! per tensor, in spec order:
//!   u32 rank, u32 extents[rank], f32 values (little endian)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::spec::ModelSpec;
use super::state::{Mode, ModelState};
use crate::engine::Tensor;

pub const MAGIC: &[u8; 4] = b"MDNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint spec: {0}")]
    Spec(String),
    #[error("checkpoint tensors do not match the stored spec")]
    Shape,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    spec: &ModelSpec,
    state: &ModelState<f32>,
) -> Result<(), CheckpointError> {
    if !state.matches(spec) {
        return Err(CheckpointError::Shape);
    }
    let json = spec.to_canonical_json();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(json.as_bytes())?;
    w.write_all(&(state.params.len() as u32).to_le_bytes())?;
    for t in &state.params {
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelSpec, ModelState<f32>), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let spec: ModelSpec =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Spec(e.to_string()))?;
    spec.check().map_err(|e| CheckpointError::Spec(e.to_string()))?;

    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(CheckpointError::Shape);
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(Tensor::new(shape, data).map_err(|_| CheckpointError::Shape)?);
    }
    let state = ModelState {
        params,
        seed: 0,
        mode: Mode::Infer,
    };
    if !state.matches(&spec) {
        return Err(CheckpointError::Shape);
    }
    Ok((spec, state))
}

pub fn save_checkpoint(
    path: &Path,
    spec: &ModelSpec,
    state: &ModelState<f32>,
) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), spec, state)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ModelState<f32>), CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
