//! Binary tensor bundles: named tensors in one little-endian file.
//!
//! ```text
//! magic    8 bytes  "GRMTENS\0"
//! version  u32      1
//! count    u32
//! then per tensor:
//!   name_len u32, name (UTF-8)
//!   dtype    u8     0 = f32, 1 = f64
//!   ndim     u32, dims u64 × ndim
//!   data     product(dims) values of dtype
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"GRMTENS\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub name: String,
    pub dtype: Dtype,
    /// Values widened to f64; f32 entries round-trip exactly.
    pub tensor: Tensor<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorBundle {
    pub entries: Vec<BundleEntry>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: Dtype, tensor: Tensor<f64>) {
        self.entries.push(BundleEntry {
            name: name.into(),
            dtype,
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[match e.dtype {
                Dtype::F32 => 0u8,
                Dtype::F64 => 1u8,
            }])?;
            let shape = e.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(e.tensor.numel() * 8);
            for &x in e.tensor.data() {
                match e.dtype {
                    Dtype::F32 => buf.extend_from_slice(&(x as f32).to_le_bytes()),
                    Dtype::F64 => buf.extend_from_slice(&x.to_le_bytes()),
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a tensor bundle (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported tensor bundle version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let dtype = match tag[0] {
                0 => Dtype::F32,
                1 => Dtype::F64,
                t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
            };
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let width = if dtype == Dtype::F32 { 4 } else { 8 };
            let mut raw = vec![0u8; numel * width];
            r.read_exact(&mut raw)?;
            let data = match dtype {
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            entries.push(BundleEntry {
                name,
                dtype,
                tensor: Tensor::new(&shape, data)?,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let mut b = TensorBundle::new();
        b.push("a", Dtype::F64, Tensor::from_rows(&[&[1.0, 1.0 / 3.0], &[-2.5, 1e-300]]));
        b.push("b", Dtype::F32, Tensor::new(&[3], vec![0.5, 0.25, 3.0]).unwrap());
        let mut bytes = Vec::new();
        b.write(&mut bytes).unwrap();
        let back = TensorBundle::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.get("b").unwrap().shape(), &[3]);
        assert!(back.get("c").is_none());
    }

    #[test]
    fn f32_entries_are_rounded() {
        let mut b = TensorBundle::new();
        b.push("x", Dtype::F32, Tensor::new(&[1], vec![0.1]).unwrap());
        let mut bytes = Vec::new();
        b.write(&mut bytes).unwrap();
        let back = TensorBundle::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.get("x").unwrap().data()[0], 0.1f32 as f64);
    }

    #[test]
    fn rejects_garbage() {
        let bytes = vec![0u8; 32];
        assert!(matches!(TensorBundle::read(&mut bytes.as_slice()), Err(Error::Format(_))));
    }
}
