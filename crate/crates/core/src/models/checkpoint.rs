//! Versioned binary container for named `f64` arrays.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (version, config digest, seed, array names and shapes), then every
//! array's values as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Params, StudentArch};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CDDLAB\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: String,
    pub seed: u64,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config_digest: String,
    seed: u64,
    arrays: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Checkpoint(format!(
                    "array `{}` does not match its shape",
                    a.name
                )));
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            arrays: self
                .arrays
                .iter()
                .map(|a| (a.name.clone(), a.shape.clone()))
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(
            20 + header.len() + 8 * self.arrays.iter().map(|a| a.data.len()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 20 + header_len;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for (name, shape) in header.arrays {
            let n: usize = shape.iter().product();
            let raw = bytes
                .get(pos..pos + 8 * n)
                .ok_or_else(|| bad("truncated data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            arrays.push(NamedArray { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after data"));
        }
        Ok(Self {
            config_digest: header.config_digest,
            seed: header.seed,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

pub fn save_student_params(
    path: &Path,
    arch: &StudentArch,
    params: &Params,
    seed: u64,
) -> Result<()> {
    arch.check_params(params)?;
    let mut arrays = Vec::new();
    let mut offset = 0;
    for (name, shape) in arch.param_shapes() {
        let n: usize = shape.iter().product();
        arrays.push(NamedArray {
            name,
            shape,
            data: params.values()[offset..offset + n].to_vec(),
        });
        offset += n;
    }
    Checkpoint {
        config_digest: arch.config().digest(),
        seed,
        arrays,
    }
    .write(path)
}

/// Loads parameters, rejecting checkpoints written for a different model config.
pub fn load_student_params(path: &Path, arch: &StudentArch) -> Result<Params> {
    let ckpt = Checkpoint::read(path)?;
    if ckpt.config_digest != arch.config().digest() {
        return Err(Error::Checkpoint(format!(
            "config digest mismatch: checkpoint {} vs model {}",
            ckpt.config_digest,
            arch.config().digest()
        )));
    }
    let mut values = Vec::with_capacity(arch.num_params());
    for (name, shape) in arch.param_shapes() {
        let a = ckpt
            .array(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
        if a.shape != shape {
            return Err(Error::Checkpoint(format!(
                "array `{name}` has shape {:?}, expected {shape:?}",
                a.shape
            )));
        }
        values.extend_from_slice(&a.data);
    }
    arch.params_from_values(values)
}
