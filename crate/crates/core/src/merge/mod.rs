//! Merged-checkpoint production: layer swapping, model soups, TIES-merging,
//! row-threshold sparsification, layer reversion, and merge provenance.
//!
//! Every strategy streams tensor-by-tensor (and chunk-by-chunk within a
//! tensor where the math allows it), so two multi-gigabyte checkpoints
//! merge within workstation memory. Weighted averages accumulate in f64 and
//! round once to FLOAT32 before casting back to the storage dtype with
//! round-to-nearest-even.

mod provenance;
mod soup;
mod sparsify;
mod swap;
mod ties;

pub use provenance::{provenance, ProvenanceEntry, ProvenanceLabel, ProvenanceReport};
pub use soup::{mav_soup_weights, mav_weighted_soup, mav_weighted_soup_into, normalized_weights, soup, soup_into};
pub use sparsify::{revert_layers, revert_layers_into, sparsify_rows, sparsify_rows_into, SparsifyStats, TensorKeepStats};
pub use swap::{
    assign_layers, format_ranges, layer_swap, layer_swap_into, magnitude_alphas, LayerAssignment,
    LayerRole, NonLayerRouting, NormRouting, SwapConfig,
};
pub use ties::{ties_merge, ties_merge_into, TiesConfig};

use rayon::prelude::*;

use crate::chunks::byte_chunks;
use crate::error::Result;
use crate::store::{DType, TensorInfo, TensorSink, TensorSource};

/// Elements per parallel block in elementwise kernels.
const PAR_BLOCK: usize = 64 * 1024;

/// The output layout every merge inherits from its first input.
pub(crate) fn plan_of(src: &dyn TensorSource) -> Vec<(String, DType, Vec<usize>)> {
    src.names()
        .into_iter()
        .map(|name| {
            let info = src.info(&name).expect("name from index");
            (name, info.dtype, info.shape)
        })
        .collect()
}

/// Bit-copies one tensor's payload into the sink, chunked.
pub(crate) fn copy_tensor(
    src: &dyn TensorSource,
    name: &str,
    info: &TensorInfo,
    sink: &mut dyn TensorSink,
) -> Result<()> {
    sink.begin_tensor(name, info.dtype, &info.shape)?;
    let mut buf = Vec::new();
    for range in byte_chunks(info) {
        buf.resize((range.end - range.start) as usize, 0);
        src.read_range(name, range.start, &mut buf)?;
        sink.write_chunk(&buf)?;
    }
    sink.end_tensor()
}

/// Elementwise weighted average of two sources:
/// `(w_a·a + w_b·b) / (w_a + w_b)` per element. A zero weight degrades to a
/// bit-copy of the other source.
pub(crate) fn average_pair_tensor(
    a: &dyn TensorSource,
    b: &dyn TensorSource,
    name: &str,
    info: &TensorInfo,
    w_a: f64,
    w_b: f64,
    sink: &mut dyn TensorSink,
) -> Result<()> {
    if w_a == 0.0 {
        return copy_tensor(b, name, info, sink);
    }
    if w_b == 0.0 {
        return copy_tensor(a, name, info, sink);
    }
    sink.begin_tensor(name, info.dtype, &info.shape)?;
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    let mut merged = Vec::new();
    let mut encoded = Vec::new();
    for range in byte_chunks(info) {
        let len = (range.end - range.start) as usize;
        buf_a.resize(len, 0);
        buf_b.resize(len, 0);
        a.read_range(name, range.start, &mut buf_a)?;
        b.read_range(name, range.start, &mut buf_b)?;
        let va = info.dtype.decode_f32(&buf_a);
        let vb = info.dtype.decode_f32(&buf_b);
        avg_pair_values(&va, &vb, w_a, w_b, &mut merged);
        encoded.clear();
        info.dtype.encode_f32_into(&merged, &mut encoded);
        sink.write_chunk(&encoded)?;
    }
    sink.end_tensor()
}

/// `out[i] = (w_a·a[i] + w_b·b[i]) / (w_a + w_b)`, f64 inside, one rounding
/// to f32. Equal inputs reproduce themselves bit-exactly for any weights.
pub(crate) fn avg_pair_values(va: &[f32], vb: &[f32], w_a: f64, w_b: f64, out: &mut Vec<f32>) {
    debug_assert_eq!(va.len(), vb.len());
    let denom = w_a + w_b;
    out.resize(va.len(), 0.0);
    out.par_chunks_mut(PAR_BLOCK)
        .zip(va.par_chunks(PAR_BLOCK).zip(vb.par_chunks(PAR_BLOCK)))
        .for_each(|(o, (x, y))| {
            for i in 0..o.len() {
                o[i] = ((w_a * x[i] as f64 + w_b * y[i] as f64) / denom) as f32;
            }
        });
}

/// k-way weighted mean with weights already normalized to sum 1. Per
/// element, terms are accumulated in a canonical order (sorted by f64 bit
/// pattern), so permuting (input, weight) pairs cannot change the result.
pub(crate) fn soup_values(inputs: &[Vec<f32>], weights: &[f64], out: &mut Vec<f32>) {
    let k = inputs.len();
    debug_assert_eq!(k, weights.len());
    let n = inputs[0].len();
    out.resize(n, 0.0);
    out.par_chunks_mut(PAR_BLOCK)
        .enumerate()
        .for_each(|(block, o)| {
            let base = block * PAR_BLOCK;
            let mut terms = vec![0f64; k];
            for (i, slot) in o.iter_mut().enumerate() {
                let idx = base + i;
                for j in 0..k {
                    terms[j] = weights[j] * inputs[j][idx] as f64;
                }
                terms.sort_unstable_by_key(|t| t.to_bits());
                *slot = terms.iter().sum::<f64>() as f32;
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_of_identical_values_is_bit_exact_for_any_weights() {
        let values: Vec<f32> = vec![0.1, -3.25e-5, 1.0e30, f32::MIN_POSITIVE, 0.0, -7.5];
        let mut out = Vec::new();
        for (wa, wb) in [(1.0, 1.0), (0.3, 0.7), (2.5, 0.01), (1e-3, 9.7)] {
            avg_pair_values(&values, &values, wa, wb, &mut out);
            for (v, o) in values.iter().zip(&out) {
                assert_eq!(v.to_bits(), o.to_bits(), "w=({wa},{wb}) v={v}");
            }
        }
    }

    #[test]
    fn average_matches_simple_arithmetic() {
        let mut out = Vec::new();
        avg_pair_values(&[0.0], &[2.0], 1.0, 1.0, &mut out);
        assert_eq!(out, vec![1.0]);
        avg_pair_values(&[3.0], &[0.0], 2.0, 1.0, &mut out);
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn soup_values_is_permutation_invariant() {
        let a: Vec<f32> = vec![1.0, 0.25, -3.5, 1.0e-7];
        let b: Vec<f32> = vec![0.5, 0.125, 2.0, -1.0e-7];
        let c: Vec<f32> = vec![-0.25, 7.0, 0.0, 5.5e-6];
        let w = [0.2f64, 0.3, 0.5];
        let mut fwd = Vec::new();
        let mut rev = Vec::new();
        soup_values(&[a.clone(), b.clone(), c.clone()], &w, &mut fwd);
        soup_values(&[c, b, a], &[w[2], w[1], w[0]], &mut rev);
        for (x, y) in fwd.iter().zip(&rev) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
