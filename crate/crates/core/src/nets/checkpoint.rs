//! Checkpoint container: a self-describing binary file mapping layer names
//! to shaped weight arrays, plus a spec fingerprint that loading verifies.
//!
//! Layout: 8-byte magic, little-endian u64 header length, JSON header
//! (meta + tensor index), then raw little-endian scalar data. Save/load
//! round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::domain::StainDomain;
use crate::error::{Error, Result};
use crate::nets::layer::Net;
use crate::nets::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SBCKPT01";

/// Descriptive header carried by every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Network family: "generator", "discriminator", "baseline_classifier",
    /// "feature_classifier".
    pub kind: String,
    /// The spec the weights were built for, as plain JSON.
    pub spec: serde_json::Value,
    /// Fingerprint of `(kind, spec)`; verified against the expected spec at
    /// load time.
    pub fingerprint: String,
    pub dtype: String,
    pub epoch: u32,
    pub from_stain: Option<StainDomain>,
    pub to_stain: Option<StainDomain>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorIndexEntry>,
}

/// Named weight arrays plus metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, ArrayD<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Snapshots a network's parameters.
    pub fn from_net(net: &dyn Net<T>, meta: CheckpointMeta) -> Self {
        let mut tensors = Vec::new();
        net.visit_params(&mut |name, v| tensors.push((name.to_string(), v.to_owned())));
        let mut meta = meta;
        meta.dtype = T::DTYPE.to_string();
        Checkpoint { meta, tensors }
    }

    /// Writes the parameters into an already-built network of the matching
    /// spec. Fails on any missing or shape-incompatible tensor.
    pub fn apply_to(&self, net: &mut dyn Net<T>) -> Result<()> {
        let mut missing = Vec::new();
        {
            let lookup: std::collections::HashMap<&str, &ArrayD<T>> = self
                .tensors
                .iter()
                .map(|(n, t)| (n.as_str(), t))
                .collect();
            net.visit_params_mut(&mut |name, mut param| {
                match lookup.get(name) {
                    Some(t) if t.shape() == param.shape() => {
                        param.assign(t);
                    }
                    Some(t) => missing.push(format!(
                        "{name}: shape {:?} vs {:?}",
                        t.shape(),
                        param.shape()
                    )),
                    None => missing.push(format!("{name}: absent")),
                }
            });
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Serde(format!(
                "checkpoint does not match network: {}",
                missing.join("; ")
            )))
        }
    }

    /// Verifies the stored fingerprint against the expected one.
    pub fn verify_fingerprint(&self, expected: &str) -> Result<()> {
        if self.meta.fingerprint == expected {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.meta.fingerprint.clone(),
            })
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorIndexEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    len: t.len(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(MAGIC)?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        let mut buf = Vec::new();
        for (_, tensor) in &self.tensors {
            buf.clear();
            let slice = tensor.as_slice().expect("standard layout");
            T::write_le_bytes(slice, &mut buf);
            file.write_all(&buf)?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
            Error::Unreadable {
                path: path.to_path_buf(),
                source: e,
            }
        })?);
        let header = read_header(&mut file, path)?;
        if header.meta.dtype != T::DTYPE {
            return Err(Error::BadCheckpoint {
                path: path.to_path_buf(),
                reason: format!(
                    "dtype {} does not match requested {}",
                    header.meta.dtype,
                    T::DTYPE
                ),
            });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let elem = std::mem::size_of::<T>();
        for entry in header.tensors {
            let mut bytes = vec![0u8; entry.len * elem];
            file.read_exact(&mut bytes)?;
            let values = T::read_le_bytes(&bytes)?;
            let tensor =
                ArrayD::from_shape_vec(entry.shape.clone(), values).map_err(|e| {
                    Error::BadCheckpoint {
                        path: path.to_path_buf(),
                        reason: format!("tensor {}: {e}", entry.name),
                    }
                })?;
            tensors.push((entry.name, tensor));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }
}

/// Reads only the metadata (for dtype/kind dispatch without loading
/// weights).
pub fn peek_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::Unreadable {
            path: path.to_path_buf(),
            source: e,
        }
    })?);
    Ok(read_header(&mut file, path)?.meta)
}

fn read_header(file: &mut impl Read, path: &Path) -> Result<Header> {
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: "bad magic".into(),
        });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    Ok(header)
}
