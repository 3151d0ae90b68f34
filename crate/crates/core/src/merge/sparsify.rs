//! Row-threshold sparsification and layer reversion: undoing fine-tuning
//! updates either row by row (where the delta MAV stays under a threshold)
//! or wholesale for chosen transformer layers.

use std::collections::BTreeSet;

use crate::chunks::byte_chunks;
use crate::error::{Error, Result};
use crate::merge::copy_tensor;
use crate::store::{require_compat, Checkpoint, MemorySink, TensorSink, TensorSource};
use crate::topology::{layer_count, NamingScheme};

/// Rows kept from the fine-tuned checkpoint for one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorKeepStats {
    pub name: String,
    pub rows: usize,
    /// Indices of rows whose delta MAV exceeded the threshold.
    pub kept: Vec<usize>,
}

impl TensorKeepStats {
    pub fn kept_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.rows as f64
        }
    }
}

/// Kept-row statistics for a sparsification run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparsifyStats {
    pub tensors: Vec<TensorKeepStats>,
    /// Tensors outside rank {1, 2}, copied through unmodified.
    pub skipped: Vec<String>,
}

impl SparsifyStats {
    pub fn total_rows(&self) -> usize {
        self.tensors.iter().map(|t| t.rows).sum()
    }

    pub fn total_kept(&self) -> usize {
        self.tensors.iter().map(|t| t.kept.len()).sum()
    }

    pub fn kept_fraction(&self) -> f64 {
        let rows = self.total_rows();
        if rows == 0 {
            0.0
        } else {
            self.total_kept() as f64 / rows as f64
        }
    }
}

/// Keeps each row of `ft` whose delta MAV against `base` strictly exceeds
/// `threshold`; other rows revert to `base`. Decisions apply to whole rows
/// so linear transformations are never partially modified. Tensors outside
/// rank {1, 2} pass through from `ft` and are listed as skipped.
pub fn sparsify_rows_into(
    base: &dyn TensorSource,
    ft: &dyn TensorSource,
    threshold: f32,
    _scheme: &NamingScheme,
    sink: &mut dyn TensorSink,
) -> Result<SparsifyStats> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    require_compat(base, ft)?;

    let mut stats = SparsifyStats::default();
    let mut buf_base = Vec::new();
    let mut buf_ft = Vec::new();
    let mut out = Vec::new();

    for name in ft.names() {
        let info = ft.info(&name).expect("name from index");
        let Some((rows, row_elems)) = info.rows() else {
            copy_tensor(ft, &name, &info, sink)?;
            stats.skipped.push(name);
            continue;
        };
        let row_bytes = row_elems * info.dtype.size();
        let mut kept = Vec::new();
        let mut row_index = 0usize;

        sink.begin_tensor(&name, info.dtype, &info.shape)?;
        for range in byte_chunks(&info) {
            let len = (range.end - range.start) as usize;
            buf_base.resize(len, 0);
            buf_ft.resize(len, 0);
            base.read_range(&name, range.start, &mut buf_base)?;
            ft.read_range(&name, range.start, &mut buf_ft)?;
            let vb = info.dtype.decode_f32(&buf_base);
            let vf = info.dtype.decode_f32(&buf_ft);

            out.clear();
            for row in 0..len / row_bytes.max(1) {
                let start = row * row_elems;
                let mut acc = 0f64;
                for i in start..start + row_elems {
                    acc += (vf[i] as f64 - vb[i] as f64).abs();
                }
                let mav = (acc / row_elems as f64) as f32;
                let byte_range = row * row_bytes..(row + 1) * row_bytes;
                if mav > threshold {
                    kept.push(row_index);
                    out.extend_from_slice(&buf_ft[byte_range]);
                } else {
                    out.extend_from_slice(&buf_base[byte_range]);
                }
                row_index += 1;
            }
            sink.write_chunk(&out)?;
        }
        // Element-less rows ([n, 0], [0]) have MAV 0 and revert wholesale.
        if row_elems == 0 {
            row_index = rows;
        }
        debug_assert_eq!(row_index, rows);
        sink.end_tensor()?;

        stats.tensors.push(TensorKeepStats { name, rows, kept });
    }
    Ok(stats)
}

/// In-memory convenience wrapper around [`sparsify_rows_into`].
pub fn sparsify_rows(
    base: &dyn TensorSource,
    ft: &dyn TensorSource,
    threshold: f32,
    scheme: &NamingScheme,
) -> Result<(Checkpoint, SparsifyStats)> {
    let mut sink = MemorySink::new();
    let stats = sparsify_rows_into(base, ft, threshold, scheme, &mut sink)?;
    Ok((sink.into_checkpoint(), stats))
}

/// Reverts whole transformer layers of `ft` to the base values: every
/// tensor whose layer index is in `layers` (norms included) is bit-copied
/// from `base`; everything else, non-layer tensors included, is bit-copied
/// from `ft`.
pub fn revert_layers_into(
    ft: &dyn TensorSource,
    base: &dyn TensorSource,
    layers: &BTreeSet<usize>,
    scheme: &NamingScheme,
    sink: &mut dyn TensorSink,
) -> Result<()> {
    require_compat(ft, base)?;
    let count = layer_count(ft, scheme)?;
    if let Some(&bad) = layers.iter().find(|&&l| l >= count) {
        return Err(Error::LayerOutOfRange { layer: bad, count });
    }
    for name in ft.names() {
        let info = ft.info(&name).expect("name from index");
        let reverted = scheme
            .classify(&name)?
            .layer
            .is_some_and(|l| layers.contains(&l));
        let src = if reverted { base } else { ft };
        copy_tensor(src, &name, &info, sink)?;
    }
    Ok(())
}

/// In-memory convenience wrapper around [`revert_layers_into`].
pub fn revert_layers(
    ft: &dyn TensorSource,
    base: &dyn TensorSource,
    layers: &BTreeSet<usize>,
    scheme: &NamingScheme,
) -> Result<Checkpoint> {
    let mut sink = MemorySink::new();
    revert_layers_into(ft, base, layers, scheme, &mut sink)?;
    Ok(sink.into_checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{diff_max, DType, TensorRecord};

    const NAME: &str = "model.layers.0.self_attn.q_proj.weight";

    fn pair(base_rows: &[[f32; 2]], ft_rows: &[[f32; 2]]) -> (Checkpoint, Checkpoint) {
        let flat = |rows: &[[f32; 2]]| rows.iter().flatten().copied().collect::<Vec<_>>();
        let mut base = Checkpoint::new();
        base.insert(
            TensorRecord::from_f32(NAME, DType::F32, vec![base_rows.len(), 2], &flat(base_rows))
                .unwrap(),
        );
        let mut ft = Checkpoint::new();
        ft.insert(
            TensorRecord::from_f32(NAME, DType::F32, vec![ft_rows.len(), 2], &flat(ft_rows))
                .unwrap(),
        );
        (base, ft)
    }

    #[test]
    fn threshold_splits_rows_by_mav() {
        // Row MAVs: 0.5 and 1.5.
        let (base, ft) = pair(
            &[[0.0, 0.0], [0.0, 0.0]],
            &[[0.5, 0.5], [1.5, 1.5]],
        );
        let scheme = NamingScheme::default();
        let (merged, stats) = sparsify_rows(&base, &ft, 1.0, &scheme).unwrap();
        let values = merged.get(NAME).unwrap().to_f32();
        assert_eq!(values, vec![0.0, 0.0, 1.5, 1.5]);
        assert_eq!(stats.tensors[0].kept, vec![1]);
        assert!((stats.kept_fraction() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_keeps_all_changed_rows() {
        let (base, ft) = pair(&[[0.0, 0.0], [1.0, 1.0]], &[[0.5, 0.5], [1.0, 1.0]]);
        let scheme = NamingScheme::default();
        let (merged, _) = sparsify_rows(&base, &ft, 0.0, &scheme).unwrap();
        assert_eq!(diff_max(&merged, &ft).unwrap()[NAME], 0.0);
    }

    #[test]
    fn infinite_threshold_reverts_everything() {
        let (base, ft) = pair(&[[0.0, 0.0]], &[[9.0, 9.0]]);
        let scheme = NamingScheme::default();
        let (merged, stats) = sparsify_rows(&base, &ft, f32::INFINITY, &scheme).unwrap();
        assert_eq!(diff_max(&merged, &base).unwrap()[NAME], 0.0);
        assert_eq!(stats.total_kept(), 0);
    }

    #[test]
    fn rank3_passes_through_from_ft() {
        let mut base = Checkpoint::new();
        base.insert(TensorRecord::from_f32("cube", DType::F32, vec![2, 2, 2], &[0.0; 8]).unwrap());
        let mut ft = Checkpoint::new();
        ft.insert(TensorRecord::from_f32("cube", DType::F32, vec![2, 2, 2], &[1.0; 8]).unwrap());
        let scheme = NamingScheme::default();
        let (merged, stats) = sparsify_rows(&base, &ft, f32::INFINITY, &scheme).unwrap();
        assert_eq!(stats.skipped, vec!["cube"]);
        assert_eq!(diff_max(&merged, &ft).unwrap()["cube"], 0.0);
    }

    fn layered(tag: f32, layers: usize) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for l in 0..layers {
            ck.insert(
                TensorRecord::from_f32(
                    format!("model.layers.{l}.self_attn.q_proj.weight"),
                    DType::F32,
                    vec![1, 1],
                    &[tag + l as f32],
                )
                .unwrap(),
            );
            ck.insert(
                TensorRecord::from_f32(
                    format!("model.layers.{l}.input_layernorm.weight"),
                    DType::F32,
                    vec![1],
                    &[tag - l as f32],
                )
                .unwrap(),
            );
        }
        ck.insert(TensorRecord::from_f32("model.embed_tokens.weight", DType::F32, vec![1, 1], &[tag * 10.0]).unwrap());
        ck
    }

    #[test]
    fn empty_layer_set_is_identity() {
        let scheme = NamingScheme::default();
        let ft = layered(1.0, 3);
        let base = layered(2.0, 3);
        let merged = revert_layers(&ft, &base, &BTreeSet::new(), &scheme).unwrap();
        for (_, d) in diff_max(&merged, &ft).unwrap() {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn full_layer_set_keeps_only_non_layer_from_ft() {
        let scheme = NamingScheme::default();
        let ft = layered(1.0, 3);
        let base = layered(2.0, 3);
        let layers: BTreeSet<usize> = (0..3).collect();
        let merged = revert_layers(&ft, &base, &layers, &scheme).unwrap();
        let diffs_vs_base = diff_max(&merged, &base).unwrap();
        for l in 0..3 {
            assert_eq!(diffs_vs_base[&format!("model.layers.{l}.self_attn.q_proj.weight")], 0.0);
            assert_eq!(diffs_vs_base[&format!("model.layers.{l}.input_layernorm.weight")], 0.0);
        }
        let diffs_vs_ft = diff_max(&merged, &ft).unwrap();
        assert_eq!(diffs_vs_ft["model.embed_tokens.weight"], 0.0);
    }

    #[test]
    fn out_of_range_layer_is_rejected() {
        let scheme = NamingScheme::default();
        let ft = layered(1.0, 3);
        let base = layered(2.0, 3);
        let layers: BTreeSet<usize> = [5].into_iter().collect();
        assert!(matches!(
            revert_layers(&ft, &base, &layers, &scheme),
            Err(Error::LayerOutOfRange { layer: 5, count: 3 })
        ));
    }
}
