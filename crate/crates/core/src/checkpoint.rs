//! Flat binary container of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "PLTK"
//! version  u32      1
//! count    u32      number of tensors
//! manifest count entries of
//!            name_len u16, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!            ndim u8, dims u64 * ndim, offset u64 (bytes from payload start)
//! payload  tensor values, row-major, little-endian, in manifest order
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: [u8; 4] = *b"PLTK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn dtype_width(d: DType) -> usize {
    match d {
        DType::F32 => 4,
        DType::F64 => 8,
    }
}

pub fn write_tensors<W: Write, T: Real>(
    mut w: W,
    tensors: &[(String, &Tensor<T>)],
) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    let width = dtype_width(T::DTYPE) as u64;
    let mut offset = 0u64;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let name_len = u16::try_from(bytes.len())
            .map_err(|_| CheckpointError::Manifest(format!("name too long: {name}")))?;
        w.write_u16::<LittleEndian>(name_len)?;
        w.write_all(bytes)?;
        w.write_u8(dtype_code(T::DTYPE))?;
        w.write_u8(t.rank() as u8)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        w.write_u64::<LittleEndian>(offset)?;
        offset += t.len() as u64 * width;
    }
    for (_, t) in tensors {
        match T::DTYPE {
            DType::F32 => {
                for &v in t.data() {
                    w.write_f32::<LittleEndian>(v.to_f64() as f32)?;
                }
            }
            DType::F64 => {
                for &v in t.data() {
                    w.write_f64::<LittleEndian>(v.to_f64())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

/// Reads every tensor, converting stored values to `T`.
pub fn read_tensors<R: Read, T: Real>(mut r: R) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Manifest("tensor name is not UTF-8".into()))?;
        let dtype = match r.read_u8()? {
            0 => DType::F32,
            1 => DType::F64,
            other => return Err(CheckpointError::Manifest(format!("unknown dtype code {other}"))),
        };
        let ndim = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let offset = r.read_u64::<LittleEndian>()?;
        entries.push(Entry {
            name,
            dtype,
            shape,
            offset,
        });
    }

    let mut position = 0u64;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if e.offset != position {
            return Err(CheckpointError::Manifest(format!(
                "tensor {:?} at offset {}, expected {position}",
                e.name, e.offset
            )));
        }
        let numel: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = match e.dtype {
                DType::F32 => r.read_f32::<LittleEndian>()? as f64,
                DType::F64 => r.read_f64::<LittleEndian>()?,
            };
            data.push(T::from_f64(v));
        }
        position += (numel * dtype_width(e.dtype)) as u64;
        let tensor = Tensor::new(e.shape, data)
            .map_err(|err| CheckpointError::Manifest(format!("tensor {:?}: {err}", e.name)))?;
        out.push((e.name, tensor));
    }
    Ok(out)
}

pub fn save<T: Real>(path: &Path, tensors: &[(String, &Tensor<T>)]) -> Result<(), CheckpointError> {
    write_tensors(BufWriter::new(File::create(path)?), tensors)
}

pub fn load<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    read_tensors(BufReader::new(File::open(path)?))
}
