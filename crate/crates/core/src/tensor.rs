//! Dense row-major `f64` arrays and the `.tns` file format.
//!
//! A `.tns` file is the 8-byte magic `OMNITNS1`, a little-endian `u64` header
//! length, a UTF-8 JSON header `{"dtype":"f64"|"f32","shape":[...]}` padded with
//! spaces so the payload starts on a 64-byte boundary, then the raw
//! little-endian payload.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TNS_MAGIC: &[u8; 8] = b"OMNITNS1";
const TNS_ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("not a .tns file (bad magic)")]
    BadMagic,
    #[error("malformed .tns header: {0}")]
    BadHeader(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element of a 3-D tensor.
    #[inline]
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    /// Circular shift along the last axis: `out[..., c] = in[..., (c - shift) mod W]`.
    pub fn roll_last(&self, shift: isize) -> Self {
        let w = *self.shape.last().unwrap();
        let mut out = self.clone();
        for (src, dst) in self.data.chunks(w).zip(out.data.chunks_mut(w)) {
            for (c, v) in src.iter().enumerate() {
                let to = (c as isize + shift).rem_euclid(w as isize) as usize;
                dst[to] = *v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_tns<W: Write>(&self, mut w: W, dtype: DType) -> Result<(), TensorError> {
        let header = serde_json::json!({ "dtype": dtype, "shape": self.shape }).to_string();
        let unpadded = TNS_MAGIC.len() + 8 + header.len();
        let padded_len = header.len() + (TNS_ALIGN - unpadded % TNS_ALIGN) % TNS_ALIGN;
        let mut header = header.into_bytes();
        header.resize(padded_len, b' ');
        w.write_all(TNS_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        match dtype {
            DType::F64 => {
                for v in &self.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            DType::F32 => {
                for v in &self.data {
                    w.write_all(&(*v as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_tns<R: Read>(mut r: R) -> Result<(Self, DType), TensorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TNS_MAGIC {
            return Err(TensorError::BadMagic);
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(TensorError::BadHeader(format!("header length {len}")));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        #[derive(Deserialize)]
        struct Header {
            dtype: DType,
            shape: Vec<usize>,
        }
        let text = std::str::from_utf8(&header)
            .map_err(|e| TensorError::BadHeader(e.to_string()))?
            .trim_end_matches(' ');
        let header: Header =
            serde_json::from_str(text).map_err(|e| TensorError::BadHeader(e.to_string()))?;
        let n: usize = header.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match header.dtype {
            DType::F64 => {
                let mut buf = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
            }
            DType::F32 => {
                let mut buf = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    data.push(f32::from_le_bytes(buf) as f64);
                }
            }
        }
        Ok((Tensor::new(header.shape, data)?, header.dtype))
    }

    pub fn save(&self, path: &Path, dtype: DType) -> Result<(), TensorError> {
        let mut buf = Vec::new();
        self.write_tns(&mut buf, dtype)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let bytes = fs::read(path)?;
        Ok(Self::read_tns(bytes.as_slice())?.0)
    }
}
