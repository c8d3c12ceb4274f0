//! `ATNF` tensor interchange format.
//!
//! Layout (all little-endian): magic `ATNF`, `u32` rank, `rank` x `u32`
//! dimensions, then the row-major `f64` payload.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::attention::{AttentionField, Matrix};

pub const MAGIC: &[u8; 4] = b"ATNF";

#[derive(Debug, Error)]
pub enum AtnfError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("payload has {actual} values, dimensions imply {expected}")]
    Size { expected: usize, actual: usize },
    #[error("trailing bytes after payload")]
    Trailing,
    #[error("tensor of rank {0} cannot be used here")]
    Rank(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f64>) -> Result<Self, AtnfError> {
        let expected = dims.iter().map(|&d| d as usize).product::<usize>();
        if expected != data.len() {
            return Err(AtnfError::Size {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 8 * self.data.len());
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, AtnfError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AtnfError::BadMagic(magic));
        }
        let rank = read_u32(r)? as usize;
        let dims = (0..rank).map(|_| read_u32(r)).collect::<io::Result<Vec<_>>>()?;
        let n = dims.iter().map(|&d| d as usize).product::<usize>();
        let mut buf = [0u8; 8];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Ok(Self { dims, data })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AtnfError> {
        let mut cursor = bytes;
        let t = Self::read(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(AtnfError::Trailing);
        }
        Ok(t)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl From<&AttentionField> for Tensor {
    fn from(f: &AttentionField) -> Self {
        let (h, w, t) = f.shape();
        Tensor {
            dims: vec![h as u32, w as u32, t as u32],
            data: f.values().to_vec(),
        }
    }
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Tensor {
            dims: vec![m.rows() as u32, m.cols() as u32],
            data: m.as_slice().to_vec(),
        }
    }
}

impl TryFrom<Tensor> for AttentionField {
    type Error = AtnfError;

    fn try_from(t: Tensor) -> Result<Self, Self::Error> {
        let [h, w, n] = t.dims[..] else {
            return Err(AtnfError::Rank(t.dims.len()));
        };
        AttentionField::new(h as usize, w as usize, n as usize, t.data)
            .map_err(|e| AtnfError::Io(io::Error::new(io::ErrorKind::InvalidData, e.to_string())))
    }
}
