//! FQT1 tensor containers: `"FQT1"`, a little-endian `u32` manifest length, a UTF-8
//! JSON manifest `[{name, dtype: "f32", shape, byte_offset}]` and a raw little-endian
//! FP32 payload. Offsets are relative to the start of the payload.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"FQT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major.
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor {name}: shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_matrix(name: &str, m: &DMatrix<f64>) -> Self {
        let data = m.transpose().iter().map(|v| *v as f32).collect();
        Self {
            name: name.to_string(),
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] => Ok(DMatrix::from_row_iterator(
                r,
                c,
                self.data.iter().map(|v| *v as f64),
            )),
            _ => Err(Error::shape(format!(
                "tensor {} has shape {:?}, expected a matrix",
                self.name, self.shape
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub tensors: Vec<Tensor>,
}

impl TensorContainer {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let manifest: Vec<ManifestEntry> = self
            .tensors
            .iter()
            .map(|t| {
                let e = ManifestEntry {
                    name: t.name.clone(),
                    dtype: "f32".into(),
                    shape: t.shape.clone(),
                    byte_offset: offset,
                };
                offset += 4 * t.data.len();
                e
            })
            .collect();
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |offset: usize, n: usize| -> Result<()> {
            if bytes.len() < offset + n {
                Err(FormatError::Truncated {
                    offset,
                    needed: offset + n - bytes.len(),
                }
                .into())
            } else {
                Ok(())
            }
        };
        need(0, 4)?;
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found,
            }
            .into());
        }
        need(4, 4)?;
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        need(8, len)?;
        let manifest: Vec<ManifestEntry> =
            serde_json::from_slice(&bytes[8..8 + len]).map_err(|e| FormatError::Invalid {
                offset: 8,
                what: format!("manifest: {e}"),
            })?;
        let base = 8 + len;
        let payload = &bytes[base..];
        let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(manifest.len());
        let mut tensors = Vec::with_capacity(manifest.len());
        for e in &manifest {
            if e.dtype != "f32" {
                return Err(FormatError::Invalid {
                    offset: 8,
                    what: format!("tensor {}: unsupported dtype {:?}", e.name, e.dtype),
                }
                .into());
            }
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |a, &b| a.checked_mul(b))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| FormatError::Invalid {
                    offset: 8,
                    what: format!("tensor {}: shape {:?} overflows", e.name, e.shape),
                })?;
            let end = e.byte_offset.saturating_add(count);
            if end > payload.len() {
                return Err(FormatError::Truncated {
                    offset: base + e.byte_offset,
                    needed: end.saturating_sub(payload.len()),
                }
                .into());
            }
            if e.byte_offset % 4 != 0 {
                return Err(FormatError::Invalid {
                    offset: base + e.byte_offset,
                    what: format!("tensor {}: offset not aligned to 4 bytes", e.name),
                }
                .into());
            }
            spans.push((e.byte_offset, end, &e.name));
            let data = payload[e.byte_offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(FormatError::Invalid {
                    offset: base + w[1].0,
                    what: format!("tensors {} and {} overlap", w[0].2, w[1].2),
                }
                .into());
            }
        }
        Ok(Self { tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Writes to a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
