//! Named parameter container and its on-disk form.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic         6 bytes  "CSEGW1"
//! version       u32      FORMAT_VERSION
//! fingerprint   u64      UNetConfig::fingerprint of the producing model
//! config_len    u32      byte length of the canonical config text
//! config        UTF-8
//! count         u32      number of tensors
//! count × {
//!   name_len    u32
//!   name        UTF-8
//!   dtype       u8       0 = f32, 1 = f64
//!   rank        u8
//!   dims        rank × u32
//!   values      product(dims) × element, little-endian
//! }
//! checksum      32 bytes SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{DType, Element, Tensor, TensorError};

pub const MAGIC: &[u8; 6] = b"CSEGW1";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("cannot access weight file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a weight file (bad magic bytes)")]
    BadMagic,
    #[error("weight file format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("weight file checksum mismatch (file truncated or corrupt)")]
    Checksum,
    #[error("weight file is malformed: {0}")]
    Malformed(String),
    #[error("tensor {name} is stored as {found}, expected {expected}")]
    DType {
        name: String,
        found: DType,
        expected: DType,
    },
    #[error("duplicate tensor name {0}")]
    Duplicate(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Ordered name → tensor map with the provenance needed to reload it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub format_version: u32,
    pub fingerprint: u64,
    /// Canonical text of the producing [`super::UNetConfig`], empty for donors
    /// assembled by hand.
    pub config: String,
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Element> Default for ModelWeights<T> {
    fn default() -> Self {
        Self::new(0, String::new())
    }
}

impl<T: Element> ModelWeights<T> {
    pub fn new(fingerprint: u64, config: String) -> Self {
        ModelWeights {
            format_version: FORMAT_VERSION,
            fingerprint,
            config,
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<(), WeightsError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(WeightsError::Duplicate(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn replace(&mut self, name: &str, t: Tensor<T>) {
        if let Some(slot) = self.tensors.get_mut(name) {
            *slot = t;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.code());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a complete file image; nothing is returned unless the
    /// checksum and every record are valid.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
            return Err(if bytes.starts_with(MAGIC) || bytes.len() < MAGIC.len() {
                WeightsError::Checksum
            } else {
                WeightsError::BadMagic
            });
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(WeightsError::Checksum);
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let format_version = r.u32()?;
        if format_version != FORMAT_VERSION {
            return Err(WeightsError::Version {
                found: format_version,
                expected: FORMAT_VERSION,
            });
        }
        let fingerprint = r.u64()?;
        let clen = r.u32()? as usize;
        let config = r.string(clen)?;
        let count = r.u32()? as usize;
        let mut w = ModelWeights {
            format_version,
            fingerprint,
            config,
            tensors: IndexMap::with_capacity(count),
        };
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = r.string(nlen)?;
            let code = r.u8()?;
            let dtype = DType::from_code(code).ok_or_else(|| WeightsError::Malformed(format!("dtype code {code}")))?;
            if dtype != T::DTYPE {
                return Err(WeightsError::DType {
                    name,
                    found: dtype,
                    expected: T::DTYPE,
                });
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * dtype.size_of())?;
            let data = raw.chunks_exact(dtype.size_of()).map(T::read_le).collect();
            w.insert(name, Tensor::from_vec(&shape, data)?)?;
        }
        if r.pos != body.len() {
            return Err(WeightsError::Malformed("trailing bytes before checksum".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        fs::write(path, self.to_bytes()).map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        let bytes = fs::read(path).map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| WeightsError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WeightsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String, WeightsError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WeightsError::Malformed("name is not UTF-8".into()))
    }
}
