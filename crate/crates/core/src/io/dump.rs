//! `.oodf` feature dumps.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0   "OODF"
//! 4   u16 version (1)
//! 6   u8  dtype (0 = f32)
//! 7   u8  flags: bit0 labels, bit1 logits, bit2 dropout stack, bit3 odin logits
//! 8   u64 N, u64 d, u64 C, u64 T
//! 40  features N*d f32
//!     labels   N u32           (bit0)
//!     logits   N*C f32         (bit1)
//!     dropout  N*T*C f32       (bit2)
//!     odin     N*C f32         (bit3)
//! ```
//!
//! The file length must equal the length the header implies.

use std::path::Path;

use crate::data::{AugmentedDump, DropoutStack, FeatureSet};
use crate::error::{OodError, Result};
use crate::io::codec::{byte_len, ByteReader, ByteWriter};
use crate::io::sidecar::{sidecar_path, Sidecar};
use crate::linalg::Matrix;

pub const DUMP_MAGIC: [u8; 4] = *b"OODF";
pub const DUMP_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 40;

const FLAG_LABELS: u8 = 1;
const FLAG_LOGITS: u8 = 1 << 1;
const FLAG_DROPOUT: u8 = 1 << 2;
const FLAG_ODIN: u8 = 1 << 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DumpFlags {
    pub labels: bool,
    pub logits: bool,
    pub dropout: bool,
    pub odin: bool,
}

impl DumpFlags {
    pub fn bits(self) -> u8 {
        let mut b = 0;
        if self.labels {
            b |= FLAG_LABELS;
        }
        if self.logits {
            b |= FLAG_LOGITS;
        }
        if self.dropout {
            b |= FLAG_DROPOUT;
        }
        if self.odin {
            b |= FLAG_ODIN;
        }
        b
    }

    pub fn from_bits(b: u8) -> Result<Self> {
        if b & 0xF0 != 0 {
            return Err(OodError::FlagMismatch(format!("reserved flag bits set in {b:#010b}")));
        }
        Ok(Self {
            labels: b & FLAG_LABELS != 0,
            logits: b & FLAG_LOGITS != 0,
            dropout: b & FLAG_DROPOUT != 0,
            odin: b & FLAG_ODIN != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u16,
    pub dtype: u8,
    pub flags: DumpFlags,
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub t: usize,
}

impl DumpHeader {
    /// Header describing exactly the channels present in `fs` and `aug`.
    pub fn describe(fs: &FeatureSet, aug: Option<&AugmentedDump>) -> Result<Self> {
        let dropout = aug.and_then(|a| a.dropout_probs.as_ref());
        let odin = aug.and_then(|a| a.odin_logits.as_ref());
        let c = fs
            .logits
            .as_ref()
            .map(Matrix::cols)
            .or(dropout.map(DropoutStack::classes))
            .or(odin.map(Matrix::cols))
            .unwrap_or(0);
        Ok(DumpHeader {
            version: DUMP_VERSION,
            dtype: DTYPE_F32,
            flags: DumpFlags {
                labels: fs.labels.is_some(),
                logits: fs.logits.is_some(),
                dropout: dropout.is_some(),
                odin: odin.is_some(),
            },
            n: fs.len(),
            d: fs.dim(),
            c,
            t: dropout.map_or(0, DropoutStack::passes),
        })
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> Result<usize> {
        let nd = self.n.checked_mul(self.d);
        let nc = self.n.checked_mul(self.c);
        let ntc = nc.and_then(|v| v.checked_mul(self.t));
        let overflow = || OodError::DimensionOverflow("dump payload size".into());
        let mut total = HEADER_LEN;
        let mut add = |elems: Option<usize>, width: usize| -> Result<()> {
            let bytes = byte_len(elems.ok_or_else(overflow)?, width)?;
            total = total.checked_add(bytes).ok_or_else(overflow)?;
            Ok(())
        };
        add(nd, 4)?;
        if self.flags.labels {
            add(Some(self.n), 4)?;
        }
        if self.flags.logits {
            add(nc, 4)?;
        }
        if self.flags.dropout {
            add(ntc, 4)?;
        }
        if self.flags.odin {
            add(nc, 4)?;
        }
        Ok(total)
    }

    fn check(&self) -> Result<()> {
        if self.version != DUMP_VERSION {
            return Err(OodError::UnsupportedVersion(self.version));
        }
        if self.dtype != DTYPE_F32 {
            return Err(OodError::UnsupportedDtype(self.dtype));
        }
        let class_channel = self.flags.logits || self.flags.dropout || self.flags.odin;
        if class_channel && self.c == 0 {
            return Err(OodError::FlagMismatch("class channel present with C = 0".into()));
        }
        if self.flags.dropout != (self.t > 0) {
            return Err(OodError::FlagMismatch(format!(
                "dropout flag {} with T = {}",
                self.flags.dropout, self.t
            )));
        }
        Ok(())
    }
}

/// A decoded dump with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub header: DumpHeader,
    pub features: FeatureSet,
    /// Present when the dump carries an extractor-only channel or a sidecar.
    pub aug: Option<AugmentedDump>,
}

fn check_finite(values: &[f64], cols: usize, channel: &'static str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let cols = cols.max(1);
        return Err(OodError::NonFinite {
            channel,
            row: i / cols,
            col: i % cols,
        });
    }
    Ok(())
}

fn check_f32_range(values: &[f64], cols: usize, channel: &'static str) -> Result<()> {
    check_finite(values, cols, channel)?;
    if let Some(i) = values.iter().position(|v| !(*v as f32).is_finite()) {
        return Err(OodError::InvalidData(format!(
            "{channel} value at ({}, {}) does not fit in f32",
            i / cols.max(1),
            i % cols.max(1)
        )));
    }
    Ok(())
}

/// Encodes against an explicit header; the header must agree with the data.
pub fn encode_dump_with_header(
    header: &DumpHeader,
    fs: &FeatureSet,
    aug: Option<&AugmentedDump>,
) -> Result<Vec<u8>> {
    header.check()?;
    let dropout = aug.and_then(|a| a.dropout_probs.as_ref());
    let odin = aug.and_then(|a| a.odin_logits.as_ref());
    let f = header.flags;
    let pairs = [
        ("labels", f.labels, fs.labels.is_some()),
        ("logits", f.logits, fs.logits.is_some()),
        ("dropout stack", f.dropout, dropout.is_some()),
        ("odin logits", f.odin, odin.is_some()),
    ];
    for (name, flag, present) in pairs {
        if flag != present {
            return Err(OodError::FlagMismatch(format!(
                "{name} flag is {flag} but channel is {}",
                if present { "present" } else { "absent" }
            )));
        }
    }
    if header.n != fs.len() || header.d != fs.dim() {
        return Err(OodError::DimensionMismatch(format!(
            "header says {}x{}, features are {}x{}",
            header.n,
            header.d,
            fs.len(),
            fs.dim()
        )));
    }
    let shape = |name: &str, rows: usize, cols: usize| -> Result<()> {
        if rows != header.n || cols != header.c {
            return Err(OodError::DimensionMismatch(format!(
                "{name} is {rows}x{cols}, header needs {}x{}",
                header.n, header.c
            )));
        }
        Ok(())
    };
    if let Some(l) = &fs.logits {
        shape("logits", l.rows(), l.cols())?;
    }
    if let Some(o) = odin {
        shape("odin logits", o.rows(), o.cols())?;
    }
    if let Some(s) = dropout {
        shape("dropout stack", s.len(), s.classes())?;
        if s.passes() != header.t {
            return Err(OodError::DimensionMismatch(format!(
                "dropout stack has T={}, header says {}",
                s.passes(),
                header.t
            )));
        }
    }
    if let Some(labels) = &fs.labels {
        if labels.len() != header.n {
            return Err(OodError::DimensionMismatch("label count".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| u32::try_from(l).is_err()) {
            return Err(OodError::InvalidData(format!("label {bad} does not fit in u32")));
        }
    }

    check_f32_range(fs.features.as_slice(), header.d, "features")?;
    if let Some(l) = &fs.logits {
        check_f32_range(l.as_slice(), header.c, "logits")?;
    }
    if let Some(s) = dropout {
        check_f32_range(s.as_slice(), header.c, "dropout stack")?;
    }
    if let Some(o) = odin {
        check_f32_range(o.as_slice(), header.c, "odin logits")?;
    }

    let mut w = ByteWriter::new();
    w.bytes(&DUMP_MAGIC);
    w.u16(header.version);
    w.u8(header.dtype);
    w.u8(f.bits());
    w.usize(header.n);
    w.usize(header.d);
    w.usize(header.c);
    w.usize(header.t);
    w.f32_block(fs.features.as_slice());
    if let Some(labels) = &fs.labels {
        for &l in labels {
            w.bytes(&(l as u32).to_le_bytes());
        }
    }
    if let Some(l) = &fs.logits {
        w.f32_block(l.as_slice());
    }
    if let Some(s) = dropout {
        w.f32_block(s.as_slice());
    }
    if let Some(o) = odin {
        w.f32_block(o.as_slice());
    }
    Ok(w.into_inner())
}

pub fn encode_dump(fs: &FeatureSet, aug: Option<&AugmentedDump>) -> Result<Vec<u8>> {
    encode_dump_with_header(&DumpHeader::describe(fs, aug)?, fs, aug)
}

/// Parses only the fixed header.
pub fn decode_header(buf: &[u8]) -> Result<DumpHeader> {
    let mut r = ByteReader::new(buf);
    r.magic(DUMP_MAGIC)?;
    let version = r.u16()?;
    if version != DUMP_VERSION {
        return Err(OodError::UnsupportedVersion(version));
    }
    let dtype = r.u8()?;
    let flags = DumpFlags::from_bits(r.u8()?)?;
    let header = DumpHeader {
        version,
        dtype,
        flags,
        n: r.usize()?,
        d: r.usize()?,
        c: r.usize()?,
        t: r.usize()?,
    };
    header.check()?;
    Ok(header)
}

/// Decodes a whole dump from memory. The sidecar is not consulted.
pub fn decode_dump(buf: &[u8]) -> Result<Dump> {
    let header = decode_header(buf)?;
    let expected = header.file_len()?;
    if buf.len() < expected {
        return Err(OodError::Truncated {
            offset: buf.len(),
            needed: expected - buf.len(),
            available: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(OodError::TrailingBytes {
            expected,
            actual: buf.len(),
        });
    }
    let (n, d, c, t) = (header.n, header.d, header.c, header.t);
    let mut r = ByteReader::new(buf);
    r.take(HEADER_LEN)?;

    let features = r.f32_block(n * d)?;
    check_finite(&features, d, "features")?;
    let mut fs = FeatureSet::new(Matrix::from_vec(n, d, features)?);

    if header.flags.labels {
        let raw = r.take(n * 4)?;
        let labels: Vec<usize> = raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("chunk of 4")) as usize)
            .collect();
        if c > 0 {
            if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
                return Err(OodError::InvalidData(format!(
                    "label {l} at row {row} out of range for C = {c}"
                )));
            }
        }
        fs.labels = Some(labels);
    }
    if header.flags.logits {
        let v = r.f32_block(n * c)?;
        check_finite(&v, c, "logits")?;
        fs.logits = Some(Matrix::from_vec(n, c, v)?);
    }
    let mut aug = AugmentedDump::default();
    if header.flags.dropout {
        let v = r.f32_block(n * t * c)?;
        check_finite(&v, c, "dropout stack")?;
        aug.dropout_probs = Some(DropoutStack::new(n, t, c, v)?);
    }
    if header.flags.odin {
        let v = r.f32_block(n * c)?;
        check_finite(&v, c, "odin logits")?;
        aug.odin_logits = Some(Matrix::from_vec(n, c, v)?);
    }
    r.finish()?;
    let aug = (header.flags.dropout || header.flags.odin).then_some(aug);
    Ok(Dump {
        header,
        features: fs,
        aug,
    })
}

/// Writes the dump and its `.meta.json` sidecar (metadata plus channel
/// checksums).
pub fn write_dump(fs: &FeatureSet, aug: Option<&AugmentedDump>, path: &Path) -> Result<()> {
    let bytes = encode_dump(fs, aug)?;
    let header = decode_header(&bytes)?;
    let meta = aug.map(|a| a.meta.clone()).unwrap_or_default();
    let sidecar = Sidecar::describe(&header, &bytes, meta)?;
    std::fs::write(path, &bytes)?;
    sidecar.write(&sidecar_path(path))?;
    Ok(())
}

/// Reads a dump. If a sidecar exists next to it, its dimensions and checksums
/// are verified and its metadata attached.
pub fn read_dump(path: &Path) -> Result<Dump> {
    let bytes = std::fs::read(path)?;
    let mut dump = decode_dump(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let sidecar = Sidecar::read(&side)?;
        sidecar.verify(&dump.header, &bytes)?;
        let aug = dump.aug.get_or_insert_with(AugmentedDump::default);
        aug.meta = sidecar.meta;
    }
    Ok(dump)
}
