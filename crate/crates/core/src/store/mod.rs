//! Single-file tensor containers and structural checkpoint comparison.
//!
//! The on-disk layout is the JSON-header + raw-buffer format used by the
//! `safetensors` ecosystem:
//!
//!   ┌──────────────┬──────────────────────┬───────────────────────┐
//!   │ 8 bytes      │ N bytes              │ data buffer           │
//!   │ header size  │ JSON header (UTF-8)  │ (contiguous, LE,      │
//!   │ (u64 LE)     │                      │  row-major)           │
//!   └──────────────┴──────────────────────┴───────────────────────┘
//!
//! Each header entry maps a tensor name to `{"dtype", "shape",
//! "data_offsets": [begin, end]}` with offsets relative to the start of the
//! data buffer; an optional `"__metadata__"` entry carries a string map.
//!
//! [`CheckpointReader`] parses the index up front and fetches payloads
//! lazily, so peak memory stays bounded by one tensor plus the index.
//! [`CheckpointWriter`] streams payloads to a temp file and atomically
//! renames on [`CheckpointWriter::finish`].

mod compat;
mod format;
mod reader;
mod writer;

pub use compat::{diff_max, require_compat, validate_compat, CompatIssue, CompatReport};
pub use format::{parse_header, render_header, HeaderEntry};
pub use reader::{load_checkpoint, CheckpointReader};
pub use writer::{save_checkpoint, CheckpointWriter};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    F16,
    BF16,
}

impl DType {
    /// Width of one element in bytes.
    pub const fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }

    /// Container header spelling.
    pub const fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "F32" => Ok(DType::F32),
            "F16" => Ok(DType::F16),
            "BF16" => Ok(DType::BF16),
            other => Err(Error::UnknownDType(other.to_string())),
        }
    }

    /// Decodes a little-endian element buffer, appending FLOAT32 values to
    /// `out`. The buffer length must be a multiple of the element width.
    pub fn decode_f32_into(self, bytes: &[u8], out: &mut Vec<f32>) {
        debug_assert_eq!(bytes.len() % self.size(), 0);
        match self {
            DType::F32 => out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            ),
            DType::F16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f32()),
            ),
            DType::BF16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|b| half::bf16::from_le_bytes([b[0], b[1]]).to_f32()),
            ),
        }
    }

    pub fn decode_f32(self, bytes: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(bytes.len() / self.size());
        self.decode_f32_into(bytes, &mut out);
        out
    }

    /// Encodes FLOAT32 values as little-endian elements of this dtype,
    /// rounding to nearest-even where the target is narrower.
    pub fn encode_f32_into(self, values: &[f32], out: &mut Vec<u8>) {
        match self {
            DType::F32 => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            DType::F16 => {
                for v in values {
                    out.extend_from_slice(&half::f16::from_f32(*v).to_le_bytes());
                }
            }
            DType::BF16 => {
                for v in values {
                    out.extend_from_slice(&half::bf16::from_f32(*v).to_le_bytes());
                }
            }
        }
    }

    pub fn encode_f32(self, values: &[f32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(values.len() * self.size());
        self.encode_f32_into(values, &mut out);
        out
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structural description of a tensor: element type and shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn new(dtype: DType, shape: Vec<usize>) -> Self {
        Self { dtype, shape }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.element_count() * self.dtype.size()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row decomposition: `(row_count, row_elements)`. A rank-2 tensor has
    /// `shape[0]` rows of `shape[1]` elements; a rank-1 tensor is a single
    /// row spanning the whole vector. `None` for other ranks.
    pub fn rows(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }
}

/// A named tensor with its raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorRecord {
    /// Builds a record, checking that the buffer length matches the
    /// dtype/shape product.
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let name = name.into();
        let expected = shape.iter().product::<usize>() * dtype.size();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                name,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            name,
            dtype,
            shape,
            data,
        })
    }

    pub fn from_f32(name: impl Into<String>, dtype: DType, shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let name = name.into();
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::LengthMismatch {
                name,
                expected: shape.iter().product::<usize>() * dtype.size(),
                actual: values.len() * dtype.size(),
            });
        }
        let data = dtype.encode_f32(values);
        Ok(Self {
            name,
            dtype,
            shape,
            data,
        })
    }

    pub fn info(&self) -> TensorInfo {
        TensorInfo::new(self.dtype, self.shape.clone())
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decoded FLOAT32 view of the payload.
    pub fn to_f32(&self) -> Vec<f32> {
        self.dtype.decode_f32(&self.data)
    }
}

/// An in-memory checkpoint: a name-keyed tensor map with deterministic
/// (lexicographic) iteration order, plus optional string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, TensorRecord>,
    pub metadata: Option<BTreeMap<String, String>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing any previous record of the same name.
    pub fn insert(&mut self, record: TensorRecord) {
        self.tensors.insert(record.name.clone(), record);
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorRecord)> {
        self.tensors.iter()
    }
}

/// Read access to an ordered tensor collection, implemented by both the
/// in-memory [`Checkpoint`] and the lazy [`CheckpointReader`]. Byte-range
/// reads let merge and analysis paths stream large tensors chunk by chunk.
pub trait TensorSource {
    /// Tensor names in lexicographic order.
    fn names(&self) -> Vec<String>;

    fn info(&self, name: &str) -> Option<TensorInfo>;

    /// Reads `buf.len()` payload bytes starting at `byte_offset` within the
    /// named tensor's buffer.
    fn read_range(&self, name: &str, byte_offset: u64, buf: &mut [u8]) -> Result<()>;

    fn read_record(&self, name: &str) -> Result<TensorRecord> {
        let info = self
            .info(name)
            .ok_or_else(|| Error::TensorNotFound(name.to_string()))?;
        let mut data = vec![0u8; info.byte_len()];
        self.read_range(name, 0, &mut data)?;
        TensorRecord::new(name, info.dtype, info.shape, data)
    }
}

impl TensorSource for Checkpoint {
    fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    fn info(&self, name: &str) -> Option<TensorInfo> {
        self.tensors.get(name).map(TensorRecord::info)
    }

    fn read_range(&self, name: &str, byte_offset: u64, buf: &mut [u8]) -> Result<()> {
        let rec = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::TensorNotFound(name.to_string()))?;
        let start = byte_offset as usize;
        let end = start + buf.len();
        if end > rec.data.len() {
            return Err(Error::InvalidOffsets {
                name: name.to_string(),
                detail: format!("range {start}..{end} beyond {} payload bytes", rec.data.len()),
            });
        }
        buf.copy_from_slice(&rec.data[start..end]);
        Ok(())
    }
}

/// Ordered tensor output. Payloads arrive as sequential chunks between
/// `begin_tensor` / `end_tensor` pairs, in the same lexicographic order the
/// sink was planned with.
pub trait TensorSink {
    fn begin_tensor(&mut self, name: &str, dtype: DType, shape: &[usize]) -> Result<()>;
    fn write_chunk(&mut self, bytes: &[u8]) -> Result<()>;
    fn end_tensor(&mut self) -> Result<()>;
}

/// Sink that accumulates into an in-memory [`Checkpoint`].
#[derive(Default)]
pub struct MemorySink {
    ckpt: Checkpoint,
    current: Option<TensorRecord>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        debug_assert!(self.current.is_none(), "unfinished tensor in sink");
        self.ckpt
    }
}

impl TensorSink for MemorySink {
    fn begin_tensor(&mut self, name: &str, dtype: DType, shape: &[usize]) -> Result<()> {
        self.current = Some(TensorRecord {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            data: Vec::new(),
        });
        Ok(())
    }

    fn write_chunk(&mut self, bytes: &[u8]) -> Result<()> {
        let cur = self
            .current
            .as_mut()
            .expect("write_chunk outside begin/end tensor");
        cur.data.extend_from_slice(bytes);
        Ok(())
    }

    fn end_tensor(&mut self) -> Result<()> {
        let rec = self.current.take().expect("end_tensor without begin");
        let expected = rec.info().byte_len();
        if rec.data.len() != expected {
            return Err(Error::LengthMismatch {
                name: rec.name,
                expected,
                actual: rec.data.len(),
            });
        }
        self.ckpt.insert(rec);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtype_widths() {
        assert_eq!(DType::F32.size(), 4);
        assert_eq!(DType::F16.size(), 2);
        assert_eq!(DType::BF16.size(), 2);
    }

    #[test]
    fn f32_codec_roundtrip_is_bit_exact() {
        let values = [0.0f32, -0.0, 1.5, f32::NAN, f32::INFINITY, f32::MIN_POSITIVE];
        let bytes = DType::F32.encode_f32(&values);
        let back = DType::F32.decode_f32(&bytes);
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn half_codecs_roundtrip_representable_values() {
        // Every f16/bf16 bit pattern decodes to f32 and re-encodes to the
        // same bits, apart from NaN payloads which stay NaN.
        for bits in [0u16, 0x3C00, 0x7BFF, 0x8000, 0xFBFF, 0x0001] {
            let v = half::f16::from_bits(bits).to_f32();
            let enc = DType::F16.encode_f32(&[v]);
            assert_eq!(u16::from_le_bytes([enc[0], enc[1]]), bits);
        }
        for bits in [0u16, 0x3F80, 0x7F7F, 0x8000, 0xFF7F, 0x0001] {
            let v = half::bf16::from_bits(bits).to_f32();
            let enc = DType::BF16.encode_f32(&[v]);
            assert_eq!(u16::from_le_bytes([enc[0], enc[1]]), bits);
        }
    }

    #[test]
    fn record_rejects_wrong_buffer_length() {
        let err = TensorRecord::new("w", DType::F32, vec![2, 2], vec![0u8; 15]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 16, actual: 15, .. }));
    }

    #[test]
    fn checkpoint_iterates_lexicographically() {
        let mut ck = Checkpoint::new();
        for name in ["b", "a", "c"] {
            ck.insert(TensorRecord::from_f32(name, DType::F32, vec![1], &[0.0]).unwrap());
        }
        let names = TensorSource::names(&ck);
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn rows_of_rank1_is_single_row() {
        assert_eq!(TensorInfo::new(DType::F32, vec![5]).rows(), Some((1, 5)));
        assert_eq!(TensorInfo::new(DType::F32, vec![3, 4]).rows(), Some((3, 4)));
        assert_eq!(TensorInfo::new(DType::F32, vec![2, 2, 2]).rows(), None);
    }
}
