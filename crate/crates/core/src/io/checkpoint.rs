//! Checkpoint container.
//!
//! ```text
//! b"RGDC"  u32 version (1)
//! u32 meta_len, meta_len bytes of UTF-8 JSON (an object)
//! u32 tensor_count
//! tensor_count × { u32 name_len, name bytes, one f64 RGDF container }
//! ```
//!
//! Tensor names are unique and stored in insertion order, so
//! decode → encode reproduces the input bytes.

use std::path::Path;

use regada_autodiff::Tensor;

use super::tensor_file::{self, Cursor, TensorData};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RGDC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    /// JSON object describing the run; interpreted by the trainer.
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl RawCheckpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            tensor_file::encode_f64(&mut out, t);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad checkpoint magic {magic:02x?}")));
        }
        let at = cur.pos();
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
        }
        let meta_len = cur.u32("metadata length")? as usize;
        let at = cur.pos();
        let meta = std::str::from_utf8(cur.take(meta_len, "metadata")?)
            .map_err(|e| Error::format(at + e.valid_up_to(), "metadata is not UTF-8"))?;
        match serde_json::from_str::<serde_json::Value>(meta) {
            Ok(serde_json::Value::Object(_)) => {}
            _ => return Err(Error::format(at, "metadata is not a JSON object")),
        }
        let count = cur.u32("tensor count")? as usize;
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let name_len = cur.u32("tensor name length")? as usize;
            let at = cur.pos();
            let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
                .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?;
            if name.is_empty() || tensors.iter().any(|(n, _)| n == name) {
                return Err(Error::format(at, format!("empty or duplicate tensor name {name:?}")));
            }
            let at = cur.pos();
            let t = match tensor_file::decode_from(&mut cur)? {
                TensorData::F64(t) => t,
                TensorData::F32 { .. } => return Err(Error::format(at + 8, format!("tensor {name:?} is not f64"))),
            };
            tensors.push((name.to_string(), t));
        }
        if cur.remaining() != 0 {
            return Err(Error::format(
                cur.pos(),
                format!("{} trailing bytes after last tensor", cur.remaining()),
            ));
        }
        Ok(Self {
            meta: meta.to_string(),
            tensors,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}
