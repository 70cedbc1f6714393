//! Little-endian binary helpers shared by the tile and checkpoint formats.

use xlm_tensor::{Float, Precision, Tensor};

use crate::error::{format, Result};

/// A tensor in either supported precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn from_typed<T: Float>(t: &Tensor<T>) -> Self {
        match T::PRECISION {
            Precision::F32 => AnyTensor::F32(t.cast()),
            Precision::F64 => AnyTensor::F64(t.cast()),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyTensor::F32(_) => Precision::F32,
            AnyTensor::F64(_) => Precision::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when the precision already matches.
    pub fn to_typed<T: Float>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            AnyTensor::F32(t) => t.to_le_bytes(),
            AnyTensor::F64(t) => t.to_le_bytes(),
        }
    }

    pub fn from_le_bytes(precision: Precision, shape: &[usize], bytes: &[u8]) -> Result<Self> {
        Ok(match precision {
            Precision::F32 => AnyTensor::F32(Tensor::from_le_bytes(shape, bytes)?),
            Precision::F64 => AnyTensor::F64(Tensor::from_le_bytes(shape, bytes)?),
        })
    }
}

/// Cursor over a byte buffer whose errors name the field being read.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn bytes(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return format(format!(
                "truncated at {field}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.bytes(1, field)?[0])
    }

    pub fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2, field)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, field)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4, "magic")?;
        if got != want {
            return format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            ));
        }
        Ok(())
    }

    pub fn precision(&mut self, field: &str) -> Result<Precision> {
        let code = self.u8(field)?;
        Precision::from_code(code).map_or_else(|| format(format!("{field}: unknown precision code {code}")), Ok)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
