//! Single-file archive of named tensors.
//!
//! Layout: 8-byte magic `MXARCHV\0`, `u32` format version, `u64` header
//! length, a JSON header, then the tensor payloads back to back. The header
//! holds free-form metadata and, per tensor, its name, shape, dtype and byte
//! range in the payload. All integers and values are little-endian.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Params, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MXARCHV\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    #[serde(flatten)]
    tensor: ArchiveTensor,
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: Value,
    tensors: Vec<ArchiveTensor>,
}

impl Archive {
    pub fn new(meta: Value) -> Self {
        Archive {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn tensors(&self) -> &[ArchiveTensor] {
        &self.tensors
    }

    pub fn put<F: Scalar>(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[F]) {
        let mut bytes = Vec::with_capacity(values.len() * F::BYTES);
        for &v in values {
            v.write_le(&mut bytes);
        }
        self.tensors.push(ArchiveTensor {
            name: name.into(),
            shape,
            dtype: F::DTYPE.to_string(),
            bytes,
        });
    }

    pub fn get<F: Scalar>(&self, name: &str) -> Result<(Vec<usize>, Vec<F>)> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing")))?;
        if t.dtype != F::DTYPE {
            return Err(Error::CheckpointMismatch {
                field: format!("{name}.dtype"),
                expected: F::DTYPE.into(),
                found: t.dtype.clone(),
            });
        }
        let values = t.bytes.chunks_exact(F::BYTES).map(F::read_le).collect();
        Ok((t.shape.clone(), values))
    }

    /// Stores every tensor of `params` under `prefix/<param name>`.
    pub fn put_params<F: Scalar, P: Params<F>>(&mut self, prefix: &str, params: &P) {
        for (meta, values) in params.param_meta().into_iter().zip(params.param_slices()) {
            self.put(format!("{prefix}/{}", meta.name), meta.shape, values);
        }
    }

    /// Loads tensors written by [`Archive::put_params`], checking shapes.
    pub fn load_params<F: Scalar, P: Params<F>>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let metas = params.param_meta();
        for (meta, dst) in metas.iter().zip(params.param_slices_mut()) {
            let name = format!("{prefix}/{}", meta.name);
            let (shape, values) = self.get::<F>(&name)?;
            if shape != meta.shape {
                return Err(Error::CheckpointMismatch {
                    field: format!("{name}.shape"),
                    expected: format!("{:?}", meta.shape),
                    found: format!("{shape:?}"),
                });
            }
            dst.copy_from_slice(&values);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let len = t.bytes.len() as u64;
                let e = IndexEntry {
                    tensor: t.clone(),
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            out.extend_from_slice(&t.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an archive (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointMismatch {
                field: "format_version".into(),
                expected: FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let (start, len) = (e.offset as usize, e.len as usize);
            let chunk = payload
                .get(start..start + len)
                .ok_or_else(|| bad("truncated tensor payload"))?;
            let elem = match e.tensor.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(bad(&format!("unknown dtype {other}"))),
            };
            if len != e.tensor.shape.iter().product::<usize>() * elem {
                return Err(bad(&format!(
                    "tensor {} has inconsistent length",
                    e.tensor.name
                )));
            }
            tensors.push(ArchiveTensor {
                bytes: chunk.to_vec(),
                ..e.tensor
            });
        }
        Ok(Archive {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
