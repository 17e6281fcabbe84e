//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"PMPKCKPT" | u32 LE header length | JSON header | f32 LE tensor data
//! ```
//!
//! The header is `{"tensors":[{"name","shape","offset"}],"meta":{...}}`. Offsets are byte
//! offsets into the data section, which starts right after the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"PMPKCKPT";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    meta: Value,
}

/// Parameters (stored as `f32`) plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub meta: Value,
}

impl Checkpoint {
    pub fn new<T: Real>(params: &ParamStore<T>, meta: Value) -> Self {
        Checkpoint {
            params: params.cast(),
            meta,
        }
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(Value::as_str)
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Checkpoint(format!("meta field '{key}' missing or not an integer")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut offset = 0usize;
        for (name, t) in self.params.iter() {
            entries.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
                offset,
            });
            offset += 4 * t.len();
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            meta: self.meta.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing PMPKCKPT magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let data_start = 12 + hlen;
        if bytes.len() < data_start {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..data_start]).map_err(|e| Error::Parse {
            context: "checkpoint header".into(),
            source: e,
        })?;
        let data = &bytes[data_start..];
        let mut params = ParamStore::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = entry.offset + 4 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} extends past the end of the data section",
                    entry.name
                )));
            }
            let values = data[entry.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(entry.name, &entry.shape, values)?;
        }
        Ok(Checkpoint {
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn bytes_round_trip() {
        let mut p = ParamStore::<f64>::new();
        p.insert("a.w", &[2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        p.insert("a.b", &[2], vec![0.5, 1e-3]).unwrap();
        let ck = Checkpoint::new(&p, json!({"kind": "test", "H": 3}));
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"PMPKCKPT");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_usize("H").unwrap(), 3);
        assert_eq!(back.meta_str("kind"), Some("test"));
    }

    #[test]
    fn header_offsets_address_the_data_section() {
        let mut p = ParamStore::<f32>::new();
        p.insert("x", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        p.insert("y", &[1], vec![7.0]).unwrap();
        let bytes = Checkpoint::new(&p, json!({})).to_bytes();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        let off = header["tensors"][1]["offset"].as_u64().unwrap() as usize;
        assert_eq!(off, 12);
        let start = 12 + hlen + off;
        assert_eq!(f32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()), 7.0);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTMAGIC\0\0\0\0").is_err());
        let mut p = ParamStore::<f32>::new();
        p.insert("x", &[4], vec![0.0; 4]).unwrap();
        let bytes = Checkpoint::new(&p, json!({})).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
