//! Versioned binary codebook container.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "HIERCODE"
//!      8     2  format version (1)
//!     10     2  D
//!     12     4  L_S
//!     16     4  L_R
//!     20     4  M
//!     24     4  t
//!     28     4  N
//!     32     8  seed
//!     40     4  flags
//!     44        N labels, each u32 byte length + UTF-8 bytes
//!               N rows, each ceil(t/4) bytes of packed trits
//!               blank row, ceil(t/4) bytes
//!    end-8     8  CRC-64/XZ of every preceding byte
//! ```
//!
//! Trit `j` of a row occupies bits `2*(j%4)..2*(j%4)+2` of byte `j/4`:
//! `00` = 0, `01` = +1, `10` = -1. `11` and nonzero padding bits are invalid.

use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use thiserror::Error;

use super::{Codebook, CodebookError, Trit};
use crate::embed::CodeParams;

pub const MAGIC: &[u8; 8] = b"HIERCODE";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 44;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unsupported codebook format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt codebook: {0}")]
    Corrupt(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn corrupt(msg: impl Into<String>) -> FormatError {
    FormatError::Corrupt(msg.into())
}

fn pack_row(row: &[Trit], out: &mut Vec<u8>) {
    for chunk in row.chunks(4) {
        let mut byte = 0u8;
        for (k, &v) in chunk.iter().enumerate() {
            let bits = match v {
                1 => 0b01,
                -1 => 0b10,
                _ => 0b00,
            };
            byte |= bits << (2 * k);
        }
        out.push(byte);
    }
}

fn unpack_row(bytes: &[u8], t: usize, out: &mut Vec<Trit>) -> Result<(), FormatError> {
    for (j, byte) in bytes.iter().enumerate() {
        for k in 0..4 {
            let bits = (byte >> (2 * k)) & 0b11;
            let pos = j * 4 + k;
            if pos >= t {
                if bits != 0 {
                    return Err(corrupt("nonzero padding bits"));
                }
                continue;
            }
            out.push(match bits {
                0b00 => 0,
                0b01 => 1,
                0b10 => -1,
                _ => return Err(corrupt(format!("invalid trit pattern at position {pos}"))),
            });
        }
    }
    Ok(())
}

pub fn serialize(codebook: &Codebook) -> Vec<u8> {
    let p = codebook.params();
    let t = codebook.dim();
    let row_bytes = t.div_ceil(4);
    let mut out = Vec::with_capacity(HEADER_LEN + codebook.len() * (row_bytes + 8) + row_bytes + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.depth() as u16).to_le_bytes());
    out.extend_from_slice(&(p.struct_bits() as u32).to_le_bytes());
    out.extend_from_slice(&(p.radical_bits() as u32).to_le_bytes());
    out.extend_from_slice(&(p.max_radicals() as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(codebook.len() as u32).to_le_bytes());
    out.extend_from_slice(&codebook.seed().to_le_bytes());
    out.extend_from_slice(&codebook.flags().to_le_bytes());
    for label in codebook.labels() {
        out.extend_from_slice(&(label.len() as u32).to_le_bytes());
        out.extend_from_slice(label.as_bytes());
    }
    for i in 0..codebook.len() {
        pack_row(codebook.row(i), &mut out);
    }
    pack_row(codebook.blank_row(), &mut out);
    let sum = CHECKSUM.checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Codebook, FormatError> {
    if bytes.len() < MAGIC.len() + 2 {
        return Err(corrupt("truncated header"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN + 8 {
        return Err(corrupt("truncated header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if CHECKSUM.checksum(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { buf: body, pos: 10 };
    let depth = r.u16()? as usize;
    let struct_bits = r.u32()? as usize;
    let radical_bits = r.u32()? as usize;
    let max_radicals = r.u32()? as usize;
    let t = r.u32()? as usize;
    let n = r.u32()? as usize;
    let seed = r.u64()?;
    let flags = r.u32()?;
    let params = CodeParams::new(depth, struct_bits, radical_bits, max_radicals)
        .map_err(|e| corrupt(format!("header parameters: {e}")))?;
    if params.total_len() != t {
        return Err(corrupt(format!(
            "header t = {t} disagrees with parameters ({})",
            params.total_len()
        )));
    }

    let mut labels = Vec::with_capacity(n.min(body.len()));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let label = std::str::from_utf8(raw).map_err(|_| corrupt("label is not UTF-8"))?;
        labels.push(label.to_string());
    }
    let row_bytes = t.div_ceil(4);
    let mut rows = Vec::with_capacity((n * t).min(body.len() * 4));
    for _ in 0..n {
        unpack_row(r.take(row_bytes)?, t, &mut rows)?;
    }
    let mut blank_row = Vec::with_capacity(t);
    unpack_row(r.take(row_bytes)?, t, &mut blank_row)?;
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes before checksum"));
    }
    Codebook::from_parts(params, labels, rows, blank_row, seed, flags).map_err(|e| match e {
        CodebookError::Invalid(msg) => corrupt(msg),
        other => corrupt(other.to_string()),
    })
}

pub fn write_codebook(codebook: &Codebook, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, serialize(codebook)).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_codebook(path: &Path) -> Result<Codebook, FormatError> {
    let bytes = std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    deserialize(&bytes)
}
