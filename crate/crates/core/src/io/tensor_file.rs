//! `RGDF` tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! offset  size      field
//! 0       4         magic  b"RGDF"
//! 4       4         u32 version (1)
//! 8       4         u32 dtype   (1 = f32, 2 = f64)
//! 12      4         u32 rank    (1..=8)
//! 16      4·rank    u32 extents (each > 0)
//! ...     n·size    row-major payload
//! ```
//!
//! Video features and word-embedding tables are stored as `f32`;
//! checkpoint tensors as `f64` so that training state round-trips exactly.
//! Every value must be finite and the buffer must end exactly at the end of
//! the payload.

use std::path::Path;

use regada_autodiff::Tensor;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RGDF";
pub const VERSION: u32 = 1;
pub const MAX_RANK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Self::F32),
            2 => Some(Self::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// Decoded container. `f32` payloads are kept as `f32` so a re-encode is
/// lossless.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32 { shape: Vec<usize>, values: Vec<f32> },
    F64(Tensor),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32 { shape, .. } => shape,
            Self::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Self::F32 { .. } => DType::F32,
            Self::F64(_) => DType::F64,
        }
    }

    /// Upcast to a 64-bit tensor.
    pub fn to_tensor(&self) -> Tensor {
        match self {
            Self::F32 { shape, values } => Tensor::new(shape.clone(), values.iter().map(|&v| v as f64).collect())
                .expect("decoded shape is consistent"),
            Self::F64(t) => t.clone(),
        }
    }
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Decode one container from the front of `cursor`.
pub(crate) fn decode_from(cur: &mut Cursor<'_>) -> Result<TensorData> {
    let start = cur.pos();
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(start, format!("bad magic {magic:02x?}")));
    }
    let at = cur.pos();
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = cur.pos();
    let code = cur.u32("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::format(at, format!("unknown dtype code {code}")))?;
    let at = cur.pos();
    let rank = cur.u32("rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(at, format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let at = cur.pos();
        let d = cur.u32("extent")? as usize;
        if d == 0 {
            return Err(Error::format(at, "zero extent"));
        }
        numel = numel
            .checked_mul(d)
            .filter(|n| n.checked_mul(dtype.size()).is_some())
            .ok_or_else(|| Error::format(at, "element count overflows"))?;
        shape.push(d);
    }
    let payload_at = cur.pos();
    let bytes = cur.take(numel * dtype.size(), "payload")?;
    match dtype {
        DType::F32 => {
            let mut values = Vec::with_capacity(numel);
            for (i, c) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                if !v.is_finite() {
                    return Err(Error::format(payload_at + 4 * i, format!("non-finite value {v}")));
                }
                values.push(v);
            }
            Ok(TensorData::F32 { shape, values })
        }
        DType::F64 => {
            let mut values = Vec::with_capacity(numel);
            for (i, c) in bytes.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                if !v.is_finite() {
                    return Err(Error::format(payload_at + 8 * i, format!("non-finite value {v}")));
                }
                values.push(v);
            }
            Ok(TensorData::F64(Tensor::new(shape, values)?))
        }
    }
}

/// Decode a buffer holding exactly one container.
pub fn decode(bytes: &[u8]) -> Result<TensorData> {
    let mut cur = Cursor::new(bytes);
    let t = decode_from(&mut cur)?;
    if cur.remaining() != 0 {
        return Err(Error::format(
            cur.pos(),
            format!("{} trailing bytes after payload", cur.remaining()),
        ));
    }
    Ok(t)
}

fn header(out: &mut Vec<u8>, dtype: DType, shape: &[usize]) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn encode_f32(out: &mut Vec<u8>, shape: &[usize], values: &[f32]) {
    header(out, DType::F32, shape);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_f64(out: &mut Vec<u8>, t: &Tensor) {
    header(out, DType::F64, t.shape());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(t: &TensorData) -> Vec<u8> {
    let mut out = Vec::new();
    match t {
        TensorData::F32 { shape, values } => encode_f32(&mut out, shape, values),
        TensorData::F64(t) => encode_f64(&mut out, t),
    }
    out
}

pub fn read(path: &Path) -> Result<TensorData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write(path: &Path, t: &TensorData) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

/// Read only the header (magic through extents) of a container file.
pub fn read_header(path: &Path) -> Result<(DType, Vec<usize>)> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; 16];
    f.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    let rank = u32::from_le_bytes(head[12..16].try_into().expect("4 bytes")) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(12, format!("{}: rank {rank}", path.display())));
    }
    let mut dims = vec![0u8; 4 * rank];
    f.read_exact(&mut dims).map_err(|e| Error::io(path, e))?;
    head.extend_from_slice(&dims);
    let mut cur = Cursor::new(&head);
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("{}: bad magic", path.display())));
    }
    if cur.u32("version")? != VERSION {
        return Err(Error::format(4, format!("{}: unsupported version", path.display())));
    }
    let code = cur.u32("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::format(8, format!("{}: dtype {code}", path.display())))?;
    cur.u32("rank")?;
    let shape = (0..rank)
        .map(|_| cur.u32("extent").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if shape.contains(&0) {
        return Err(Error::format(16, format!("{}: zero extent", path.display())));
    }
    Ok((dtype, shape))
}
