//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DARTCKPT"
//! format   u32
//! version  u64      parameter version tag
//! spec     u32 length + UTF-8 JSON NetSpec
//! count    u32      number of arrays
//! array    u32 name length, name, u32 ndim, ndim × u64 dims, f64 values
//! digest   32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::net::{NetSpec, PolicyNet};
use super::params::{hex, ParamEntry, ParameterSet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DARTCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const MAX_NAME: usize = 256;
const MAX_NDIM: usize = 4;
const MAX_ARRAYS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn new(spec: NetSpec, params: ParameterSet) -> Self {
        Checkpoint { spec, params }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.version.to_le_bytes());
        let spec = serde_json::to_vec(&self.spec).expect("NetSpec serializes");
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&(self.params.entries().len() as u32).to_le_bytes());
        for e in self.params.entries() {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for d in &e.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &self.params.values[e.offset..e.offset + e.len()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if &body[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let format = r.u32()?;
        if format != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {format}")));
        }
        let version = r.u64()?;
        let spec_len = r.u32()? as usize;
        let spec: NetSpec = serde_json::from_slice(r.take(spec_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad net spec: {e}")))?;
        let net = PolicyNet::new(spec.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let count = r.u32()? as usize;
        if count > MAX_ARRAYS {
            return Err(Error::Checkpoint(format!("too many arrays ({count})")));
        }
        let mut entries = Vec::with_capacity(count);
        let mut values = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            if name_len > MAX_NAME {
                return Err(Error::Checkpoint("array name too long".into()));
            }
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            if ndim == 0 || ndim > MAX_NDIM {
                return Err(Error::Checkpoint(format!("array {name} has {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut n: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dim overflow".into()))?;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::Checkpoint("array size overflow".into()))?;
                shape.push(d);
            }
            let nbytes = n
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("array size overflow".into()))?;
            let raw = r.take(nbytes)?;
            entries.push(ParamEntry {
                name,
                shape,
                offset: values.len(),
            });
            values.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after arrays".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
        let params = ParameterSet::from_parts(entries, values, version)?;
        net.check_params(&params)
            .map_err(|_| Error::Checkpoint("arrays do not match the net spec".into()))?;
        Ok(Checkpoint { spec, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::decode(&fs::read(path)?)
    }

    /// SHA-256 of the encoded file.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(self.encode()))
    }
}

/// Hash of an arbitrary file on disk.
pub fn file_hash(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
