//! Binary container shared by the graph cache and parameter checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DDIPACK\0"
//! 8       4     kind length k (u32 LE)
//! 12      k     kind (UTF-8, e.g. "graph-cache")
//! ..      4     schema version (u32 LE)
//! ..      8     header length h (u64 LE)
//! ..      h     header (compact JSON, UTF-8)
//! ..      8     blob length b (u64 LE)
//! ..      b     blob (raw little-endian f32 arrays referenced from the header)
//! ..      32    SHA-256 of every preceding byte
//! ```
//!
//! Floating-point data lives only in the blob, so values round-trip
//! bit-exactly; the JSON header carries structure and integers.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"DDIPACK\0";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a DDIPACK file (bad magic)")]
    BadMagic,
    #[error("expected container kind {expected:?}, found {found:?}")]
    WrongKind { expected: String, found: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checksum mismatch: file is corrupt or truncated")]
    Checksum,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("array reference outside blob: offset {offset}, len {len}, blob {blob}")]
    BadArray { offset: u64, len: u64, blob: u64 },
    #[error("invalid utf-8 in container kind")]
    Utf8,
}

/// Location of a row-major `f32` matrix inside the blob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayRef {
    pub offset: u64,
    pub rows: u64,
    pub cols: u64,
}

#[derive(Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn push(&mut self, a: &Array2<f32>) -> ArrayRef {
        let offset = self.bytes.len() as u64;
        for v in a.iter() {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        ArrayRef {
            offset,
            rows: a.nrows() as u64,
            cols: a.ncols() as u64,
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub fn read_array(blob: &[u8], r: &ArrayRef) -> Result<Array2<f32>, ContainerError> {
    let len = r.rows * r.cols * 4;
    let end = r
        .offset
        .checked_add(len)
        .filter(|&e| e <= blob.len() as u64)
        .ok_or(ContainerError::BadArray {
            offset: r.offset,
            len,
            blob: blob.len() as u64,
        })?;
    let data: Vec<f32> = blob[r.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec((r.rows as usize, r.cols as usize), data).expect("sized above"))
}

pub fn write<W: Write, H: Serialize>(
    mut w: W,
    kind: &str,
    version: u32,
    header: &H,
    blob: &[u8],
) -> Result<(), ContainerError> {
    let header = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(64 + header.len() + blob.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    buf.extend_from_slice(kind.as_bytes());
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    buf.extend_from_slice(blob);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(digest.as_slice());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read<R: Read, H: for<'de> Deserialize<'de>>(
    mut r: R,
    kind: &str,
    version: u32,
) -> Result<(H, Vec<u8>), ContainerError> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    if all.len() < MAGIC.len() + 32 || &all[..8] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let (body, digest) = all.split_at(all.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ContainerError::Checksum);
    }
    let mut cur = Cursor { buf: body, pos: 8 };
    let klen = cur.u32()? as usize;
    let found = std::str::from_utf8(cur.take(klen)?).map_err(|_| ContainerError::Utf8)?;
    if found != kind {
        return Err(ContainerError::WrongKind {
            expected: kind.to_string(),
            found: found.to_string(),
        });
    }
    let v = cur.u32()?;
    if v != version {
        return Err(ContainerError::Version {
            expected: version,
            found: v,
        });
    }
    let hlen = cur.u64()? as usize;
    let header: H = serde_json::from_slice(cur.take(hlen)?)?;
    let blen = cur.u64()? as usize;
    let blob = cur.take(blen)?.to_vec();
    Ok((header, blob))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(ContainerError::Checksum)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}
