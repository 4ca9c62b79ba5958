//! Little-endian primitives with bounds-checked reads.

use crate::error::{OodError, Result};
use crate::linalg::Matrix;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(OodError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        if self.remaining() < 4 {
            return Err(OodError::Truncated {
                offset: self.pos,
                needed: 4,
                available: self.buf.len(),
            });
        }
        let found = self.array::<4>()?;
        if found != expected {
            return Err(OodError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| OodError::DimensionOverflow(format!("count {v}")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(OodError::InvalidData(format!("bad boolean byte {b}"))),
        }
    }

    /// Length-prefixed f64 vector. The length is checked against the bytes
    /// left before anything is allocated.
    pub fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        let bytes = self.take(byte_len(n, 8)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    pub fn usize_vec(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        let bytes = self.take(byte_len(n, 8)?)?;
        bytes
            .chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().expect("chunk of 8"));
                usize::try_from(v).map_err(|_| OodError::DimensionOverflow(format!("index {v}")))
            })
            .collect()
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| OodError::DimensionOverflow(format!("{rows} x {cols}")))?;
        let bytes = self.take(byte_len(n, 8)?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// `n` f32 values widened to f64.
    pub fn f32_block(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(byte_len(n, 4)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(OodError::TrailingBytes {
                expected: self.pos,
                actual: self.buf.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn byte_len(count: usize, width: usize) -> Result<usize> {
    count
        .checked_mul(width)
        .ok_or_else(|| OodError::DimensionOverflow(format!("{count} elements of {width} bytes")))
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    pub fn f64_vec(&mut self, v: &[f64]) {
        self.usize(v.len());
        for x in v {
            self.f64(*x);
        }
    }

    pub fn usize_vec(&mut self, v: &[usize]) {
        self.usize(v.len());
        for x in v {
            self.usize(*x);
        }
    }

    pub fn matrix(&mut self, m: &Matrix) {
        self.usize(m.rows());
        self.usize(m.cols());
        for x in m.as_slice() {
            self.f64(*x);
        }
    }

    /// Narrows to f32; callers check the values fit.
    pub fn f32_block(&mut self, v: &[f64]) {
        for x in v {
            self.bytes(&(*x as f32).to_le_bytes());
        }
    }
}
