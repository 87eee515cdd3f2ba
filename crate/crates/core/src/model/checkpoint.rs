use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_shapes, param_shapes, EncoderParams, ModelConfig};
use crate::compute::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"RELCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

/// Model weights plus free-form metadata (vocabulary layout, training
/// provenance) carried alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ModelConfig,
    pub params: EncoderParams<T>,
    pub meta: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    /// Layout: 8-byte magic, little-endian u64 header length, JSON header,
    /// then every tensor as raw little-endian scalars in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        check_shapes(&self.config, &self.params)?;
        let mut data = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.params.named() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: data.len(),
            });
            for &x in t.data() {
                x.write_le(&mut data);
            }
        }
        let header = serde_json::to_vec(&Header {
            dtype: T::NAME.to_string(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let (header, header_end) = read_header(bytes)?;
        if header.dtype != T::NAME {
            return Err(Error::Checkpoint(format!("checkpoint holds {}, requested {}", header.dtype, T::NAME)));
        }
        header.config.validate()?;
        let data = &bytes[header_end..];
        let expected = param_shapes(&header.config);
        let expected_names: Vec<String> = expected.named().into_iter().map(|(n, _)| n).collect();
        let found: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
        if expected_names != found {
            return Err(bad("tensor list does not match the configuration"));
        }
        let mut entries = header.tensors.iter();
        let params = expected.try_map(|name, shape| {
            let entry = entries.next().expect("lengths checked");
            if &entry.shape != shape {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {shape:?}", entry.shape)));
            }
            let len: usize = shape.iter().product();
            let end = entry.offset + len * T::BYTES;
            let raw = data
                .get(entry.offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: data out of range")))?;
            Tensor::new(shape.clone(), raw.chunks_exact(T::BYTES).map(T::read_le).collect())
        })?;
        Ok(Self {
            config: header.config,
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized checkpoint; identifies a model version.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_bytes()?)))
    }
}

fn read_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    Ok((serde_json::from_slice(&bytes[16..header_end])?, header_end))
}

/// Scalar type name (`"f32"` or `"f64"`) stored in a serialized checkpoint.
pub fn checkpoint_dtype(bytes: &[u8]) -> Result<String> {
    Ok(read_header(bytes)?.0.dtype)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
