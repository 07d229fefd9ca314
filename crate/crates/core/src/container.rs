//! Checkpoint container shared by the trained models.
//!
//! Layout: magic `CWER`, u32 version, 4-byte kind tag, u32-prefixed JSON
//! config, u32 blob count, then per blob a u32-prefixed UTF-8 name, a dtype
//! byte (0 = f32, 1 = f64), u32 rank, u64 dims and little-endian values.
//! A SHA-256 of everything before it closes the file.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CWER";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("checksum mismatch")]
    Checksum,
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    KindMismatch { expected: String, found: String },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: BlobData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: [u8; 4],
    /// Serialized JSON config.
    pub config: String,
    pub blobs: Vec<Blob>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.extend_from_slice(&self.kind);
        put_u32(&mut out, self.config.len() as u32);
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.blobs.len() as u32);
        for b in &self.blobs {
            put_u32(&mut out, b.name.len() as u32);
            out.extend_from_slice(b.name.as_bytes());
            out.push(match b.data {
                BlobData::F32(_) => 0,
                BlobData::F64(_) => 1,
            });
            put_u32(&mut out, b.shape.len() as u32);
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &b.data {
                BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                BlobData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses and verifies the checksum; with `kind`, the tag must match.
    pub fn from_bytes(bytes: &[u8], kind: Option<&[u8; 4]>) -> Result<Self, ContainerError> {
        if bytes.len() < 12 + DIGEST_LEN || &bytes[..4] != MAGIC {
            return Err(ContainerError::Format("missing CWER magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ContainerError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(ContainerError::Format(format!("unsupported version {version}")));
        }
        let found: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if let Some(want) = kind {
            if want != &found {
                return Err(ContainerError::KindMismatch {
                    expected: String::from_utf8_lossy(want).into_owned(),
                    found: String::from_utf8_lossy(&found).into_owned(),
                });
            }
        }
        let len = r.u32()? as usize;
        let config = r.utf8(len)?;
        let n = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = r.utf8(len)?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ContainerError::Format(format!("blob {name} is too large")))?;
            let data = match dtype {
                0 => BlobData::F32(
                    r.take(count.saturating_mul(4))?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => BlobData::F64(
                    r.take(count.saturating_mul(8))?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                other => return Err(ContainerError::Format(format!("unknown dtype {other}"))),
            };
            blobs.push(Blob { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(ContainerError::Format("trailing bytes after blobs".into()));
        }
        Ok(Container {
            kind: found,
            config,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path, kind: Option<&[u8; 4]>) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?, kind)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ContainerError::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<String, ContainerError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ContainerError::Format("invalid UTF-8".into()))
    }
}
