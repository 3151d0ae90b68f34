//! Row-aligned byte chunking for streaming tensor traversal.

use std::ops::Range;

use crate::store::TensorInfo;

/// Target chunk size; actual chunks are rounded down to a whole number of
/// rows so row-granular operations never see a split row.
pub const CHUNK_BYTES: usize = 4 << 20;

/// Splits a tensor payload into byte ranges. Rank-1/2 tensors chunk on row
/// boundaries (a chunk is at least one full row); other ranks chunk on
/// element boundaries.
pub fn byte_chunks(info: &TensorInfo) -> impl Iterator<Item = Range<u64>> {
    let total = info.byte_len() as u64;
    let unit = match info.rows() {
        Some((_, row_elems)) => (row_elems.max(1) * info.dtype.size()) as u64,
        None => info.dtype.size() as u64,
    };
    let chunk = if unit >= CHUNK_BYTES as u64 {
        unit
    } else {
        (CHUNK_BYTES as u64 / unit) * unit
    };
    let mut start = 0u64;
    std::iter::from_fn(move || {
        if start >= total {
            return None;
        }
        let end = (start + chunk).min(total);
        let range = start..end;
        start = end;
        Some(range)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::DType;

    #[test]
    fn chunks_cover_payload_without_splitting_rows() {
        let info = TensorInfo::new(DType::F32, vec![3000, 1000]); // 4000-byte rows
        let mut covered = 0u64;
        for range in byte_chunks(&info) {
            assert_eq!(range.start % 4000, 0);
            assert_eq!((range.end - range.start) % 4000, 0);
            covered += range.end - range.start;
        }
        assert_eq!(covered, info.byte_len() as u64);
    }

    #[test]
    fn empty_tensor_yields_no_chunks() {
        let info = TensorInfo::new(DType::F32, vec![0, 8]);
        assert_eq!(byte_chunks(&info).count(), 0);
    }

    #[test]
    fn oversized_row_becomes_one_chunk() {
        let info = TensorInfo::new(DType::F32, vec![2, 2 * CHUNK_BYTES / 4]);
        let chunks: Vec<_> = byte_chunks(&info).collect();
        assert_eq!(chunks.len(), 2);
    }
}
