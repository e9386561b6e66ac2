//! Flat binary container for named parameter tensors.
//!
//! Layout (little endian): magic `DVSSPRM1`, `u32` count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f32` values.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::{Param, Real};

const MAGIC: &[u8; 8] = b"DVSSPRM1";

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("expected {expected} tensors, file holds {found}")]
    Count { expected: usize, found: usize },
    #[error("tensor {index}: expected `{expected}`, found `{found}`")]
    Name { index: usize, expected: String, found: String },
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

pub fn write_params<T: Real, W: Write>(mut w: W, params: &[&Param<T>]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.iter() {
            w.write_all(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads values into existing params, requiring identical names and shapes.
pub fn read_params<T: Real, R: Read>(mut r: R, params: &mut [&mut Param<T>]) -> Result<(), SerializeError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SerializeError::BadMagic);
    }
    let found = read_u32(&mut r)? as usize;
    if found != params.len() {
        return Err(SerializeError::Count { expected: params.len(), found });
    }
    for (index, p) in params.iter_mut().enumerate() {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8_lossy(&name).into_owned();
        if name != p.name {
            return Err(SerializeError::Name { index, expected: p.name.clone(), found: name });
        }
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        if shape != p.value.shape() {
            return Err(SerializeError::Shape { name, expected: p.value.shape().to_vec(), found: shape });
        }
        for v in p.value.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = T::from_f32(f32::from_le_bytes(b)).expect("finite conversion");
        }
    }
    Ok(())
}
