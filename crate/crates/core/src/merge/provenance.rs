//! Merge provenance: auditing which expert each tensor of a merged
//! checkpoint came from, and by how much it deviates from the expected
//! value.

use std::collections::BTreeMap;
use std::fmt;

use crate::chunks::byte_chunks;
use crate::error::Result;
use crate::merge::swap::{assign_layers, route_for, Route, SwapConfig};
use crate::merge::avg_pair_values;
use crate::store::{require_compat, TensorSource};
use crate::topology::{layer_count, NamingScheme};

/// Expected source of a merged tensor under a swap config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceLabel {
    Task,
    Lang,
    TransitionAvg,
    NonLayer,
}

impl fmt::Display for ProvenanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProvenanceLabel::Task => "task",
            ProvenanceLabel::Lang => "lang",
            ProvenanceLabel::TransitionAvg => "transition-avg",
            ProvenanceLabel::NonLayer => "non-layer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProvenanceEntry {
    pub label: ProvenanceLabel,
    /// Max abs deviation (FLOAT32) from the expected source value.
    pub deviation: f32,
}

/// Per-tensor provenance audit of a merged checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProvenanceReport {
    pub entries: BTreeMap<String, ProvenanceEntry>,
}

impl ProvenanceReport {
    pub fn max_deviation(&self) -> f32 {
        self.entries
            .values()
            .map(|e| e.deviation)
            .fold(0.0, f32::max)
    }

    /// Tensors whose bytes deviate from the expected source value.
    pub fn deviating(&self) -> Vec<(&str, &ProvenanceEntry)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.deviation != 0.0)
            .map(|(n, e)| (n.as_str(), e))
            .collect()
    }
}

/// Labels every tensor of `merged` per the swap config routing and reports
/// the max abs deviation from the expected value: the source copy for
/// task/lang routes, or the recomputed weighted average for averaged
/// routes. A freshly swapped checkpoint reports all zeros.
pub fn provenance(
    merged: &dyn TensorSource,
    task: &dyn TensorSource,
    lang: &dyn TensorSource,
    cfg: &SwapConfig,
    scheme: &NamingScheme,
) -> Result<ProvenanceReport> {
    require_compat(merged, task)?;
    require_compat(merged, lang)?;
    let layers = layer_count(merged, scheme)?;
    let assignment = assign_layers(cfg, layers)?;
    let (w_task, w_lang) = (cfg.alpha_task as f64, cfg.alpha_lang as f64);

    let mut entries = BTreeMap::new();
    let mut buf_m = Vec::new();
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    let mut expected = Vec::new();
    let mut expected_bytes = Vec::new();

    for name in merged.names() {
        let info = merged.info(&name).expect("name from index");
        let locus = scheme.classify(&name)?;
        let route = route_for(&locus, &assignment, cfg);
        let label = match route {
            _ if !locus.kind.carries_layer() => ProvenanceLabel::NonLayer,
            Route::CopyTask => ProvenanceLabel::Task,
            Route::CopyLang => ProvenanceLabel::Lang,
            Route::Average => ProvenanceLabel::TransitionAvg,
        };

        let mut deviation = 0f32;
        for range in byte_chunks(&info) {
            let len = (range.end - range.start) as usize;
            buf_m.resize(len, 0);
            merged.read_range(&name, range.start, &mut buf_m)?;
            let vm = info.dtype.decode_f32(&buf_m);

            let ve = match route {
                Route::CopyTask => {
                    buf_a.resize(len, 0);
                    task.read_range(&name, range.start, &mut buf_a)?;
                    info.dtype.decode_f32(&buf_a)
                }
                Route::CopyLang => {
                    buf_a.resize(len, 0);
                    lang.read_range(&name, range.start, &mut buf_a)?;
                    info.dtype.decode_f32(&buf_a)
                }
                Route::Average => {
                    buf_a.resize(len, 0);
                    buf_b.resize(len, 0);
                    task.read_range(&name, range.start, &mut buf_a)?;
                    lang.read_range(&name, range.start, &mut buf_b)?;
                    let vt = info.dtype.decode_f32(&buf_a);
                    let vl = info.dtype.decode_f32(&buf_b);
                    if w_task == 0.0 {
                        vl
                    } else if w_lang == 0.0 {
                        vt
                    } else {
                        avg_pair_values(&vt, &vl, w_task, w_lang, &mut expected);
                        // Same storage rounding the merge applied.
                        expected_bytes.clear();
                        info.dtype.encode_f32_into(&expected, &mut expected_bytes);
                        info.dtype.decode_f32(&expected_bytes)
                    }
                }
            };

            for (m, e) in vm.iter().zip(&ve) {
                if m.to_bits() == e.to_bits() {
                    continue;
                }
                let d = (m - e).abs();
                let d = if d.is_nan() { f32::INFINITY } else { d };
                if d > deviation {
                    deviation = d;
                }
            }
        }
        entries.insert(name, ProvenanceEntry { label, deviation });
    }
    Ok(ProvenanceReport { entries })
}
