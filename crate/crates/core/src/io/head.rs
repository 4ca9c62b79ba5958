//! `.oodh` linear head files.
//!
//! ```text
//! "OODH" | u16 version (1) | u8 dtype (0 = f32) | u8 reserved (0) | u64 C | u64 d
//! W  C*d f32, row-major
//! b  C f32
//! ```

use std::path::Path;

use crate::data::LinearHead;
use crate::error::{OodError, Result};
use crate::io::codec::{byte_len, ByteReader, ByteWriter};
use crate::linalg::Matrix;

pub const HEAD_MAGIC: [u8; 4] = *b"OODH";
pub const HEAD_VERSION: u16 = 1;

pub fn encode_head(head: &LinearHead) -> Result<Vec<u8>> {
    let all = head.weights.as_slice().iter().chain(&head.bias);
    if all.clone().any(|v| !(*v as f32).is_finite()) {
        return Err(OodError::InvalidData("head value not representable as f32".into()));
    }
    let mut w = ByteWriter::new();
    w.bytes(&HEAD_MAGIC);
    w.u16(HEAD_VERSION);
    w.u8(0);
    w.u8(0);
    w.usize(head.num_classes());
    w.usize(head.feature_dim());
    w.f32_block(head.weights.as_slice());
    w.f32_block(&head.bias);
    Ok(w.into_inner())
}

pub fn decode_head(buf: &[u8]) -> Result<LinearHead> {
    let mut r = ByteReader::new(buf);
    r.magic(HEAD_MAGIC)?;
    let version = r.u16()?;
    if version != HEAD_VERSION {
        return Err(OodError::UnsupportedVersion(version));
    }
    let dtype = r.u8()?;
    if dtype != 0 {
        return Err(OodError::UnsupportedDtype(dtype));
    }
    if r.u8()? != 0 {
        return Err(OodError::InvalidData("reserved head byte is not zero".into()));
    }
    let c = r.usize()?;
    let d = r.usize()?;
    if c == 0 {
        return Err(OodError::InvalidData("head has no classes".into()));
    }
    let cd = c
        .checked_mul(d)
        .ok_or_else(|| OodError::DimensionOverflow(format!("{c} x {d} head")))?;
    let expected = byte_len(cd, 4)?
        .checked_add(byte_len(c, 4)?)
        .ok_or_else(|| OodError::DimensionOverflow("head size".into()))?;
    if r.remaining() < expected {
        return Err(OodError::Truncated {
            offset: r.position(),
            needed: expected,
            available: buf.len(),
        });
    }
    let w = r.f32_block(cd)?;
    let b = r.f32_block(c)?;
    r.finish()?;
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(OodError::NonFinite {
            channel: "head weights",
            row: i / d.max(1),
            col: i % d.max(1),
        });
    }
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(OodError::NonFinite {
            channel: "head bias",
            row: i,
            col: 0,
        });
    }
    LinearHead::new(Matrix::from_vec(c, d, w)?, b)
}

pub fn write_head(head: &LinearHead, path: &Path) -> Result<()> {
    std::fs::write(path, encode_head(head)?)?;
    Ok(())
}

pub fn read_head(path: &Path) -> Result<LinearHead> {
    decode_head(&std::fs::read(path)?)
}
