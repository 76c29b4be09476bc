//! `FVEC1` feature-vector files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size       field
//! 0       5          magic "FVEC1"
//! 5       4          n   (u32, number of vectors)
//! 9       4          dim (u32, components per vector)
//! 13      4*n*dim    f32 values, vector-major
//! ```
//!
//! Frame ids live next to the binary file in a JSON array of length `n`
//! (see [`sidecar_path`]).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const FVEC_MAGIC: &[u8; 5] = b"FVEC1";
const HEADER_LEN: usize = 13;

/// Feature vectors of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVectorSet {
    pub domain_id: String,
    dim: usize,
    values: Vec<f32>,
    frame_ids: Vec<String>,
}

impl FeatureVectorSet {
    pub fn new(
        domain_id: impl Into<String>,
        dim: usize,
        values: Vec<f32>,
        frame_ids: Vec<String>,
    ) -> Result<Self> {
        if frame_ids.is_empty() || dim == 0 {
            return Err(Error::EmptyFeatureSet);
        }
        if values.len() != frame_ids.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} vectors of dimension {dim}",
                values.len(),
                frame_ids.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at vector {}, component {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self {
            domain_id: domain_id.into(),
            dim,
            values,
            frame_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame_ids(&self) -> &[String] {
        &self.frame_ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// `a.fvec` → `a.fvec.frames.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".frames.json");
    PathBuf::from(s)
}

pub fn encode_features(set: &FeatureVectorSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * set.values.len());
    out.extend_from_slice(FVEC_MAGIC);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for v in &set.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes the binary part; `frame_ids` must come from the sidecar.
pub fn decode_features(
    bytes: &[u8],
    domain_id: impl Into<String>,
    frame_ids: Vec<String>,
) -> Result<FeatureVectorSet> {
    if bytes.len() < FVEC_MAGIC.len() || &bytes[..5] != FVEC_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic (expected \"FVEC1\")".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len(),
            message: "truncated header".into(),
        });
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    let expected = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format {
            offset: 5,
            message: "header sizes overflow".into(),
        })?;
    let have = bytes.len() - HEADER_LEN;
    if have != expected {
        return Err(Error::Format {
            offset: HEADER_LEN,
            message: format!("size mismatch: header declares {expected} payload bytes, found {have}"),
        });
    }
    if frame_ids.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "sidecar lists {} frame ids for {n} vectors",
            frame_ids.len()
        )));
    }
    let mut values = Vec::with_capacity(n * dim);
    for (i, c) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::Format {
                offset: HEADER_LEN + 4 * i,
                message: "non-finite value".into(),
            });
        }
        values.push(v);
    }
    FeatureVectorSet::new(domain_id, dim, values, frame_ids)
}

/// Reads `path` and its sidecar. The domain id is the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureVectorSet> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let sidecar = sidecar_path(path);
    let ids: Vec<String> = serde_json::from_slice(&fs::read(&sidecar)?).map_err(|e| Error::Json {
        line: e.line(),
        message: format!("{}: {e}", sidecar.display()),
    })?;
    let domain = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, domain, ids)
}

pub fn write_features(set: &FeatureVectorSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(set))?;
    let ids = serde_json::to_vec(&set.frame_ids).map_err(|e| Error::Io(e.into()))?;
    fs::write(sidecar_path(path), ids)?;
    Ok(())
}
