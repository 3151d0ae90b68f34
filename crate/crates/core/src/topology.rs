//! Tensor-name topology: mapping raw parameter names to a layer index and
//! parameter kind so the rest of the toolkit can reason about bottom/top/
//! middle layers and attention vs feed-forward columns.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::TensorSource;

/// Parameter kind of a tensor. The first seven kinds form the columns of
/// the per-layer analysis grid; `LayerNorm` carries a layer index but sits
/// outside the grid; `NonLayer` covers everything else (embeddings, final
/// norm, output head).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    FfnW1,
    FfnW3,
    FfnW2,
    LayerNorm,
    NonLayer,
}

impl ParamKind {
    /// Grid column order: four attention kinds, then the three feed-forward
    /// kinds.
    pub const GRID: [ParamKind; 7] = [
        ParamKind::AttnQ,
        ParamKind::AttnK,
        ParamKind::AttnV,
        ParamKind::AttnO,
        ParamKind::FfnW1,
        ParamKind::FfnW3,
        ParamKind::FfnW2,
    ];

    pub fn is_grid(self) -> bool {
        !matches!(self, ParamKind::LayerNorm | ParamKind::NonLayer)
    }

    pub fn carries_layer(self) -> bool {
        self != ParamKind::NonLayer
    }

    /// Short column label used in CSV headers and figure axes.
    pub fn column_label(self) -> &'static str {
        match self {
            ParamKind::AttnQ => "Wq",
            ParamKind::AttnK => "Wk",
            ParamKind::AttnV => "Wv",
            ParamKind::AttnO => "Wo",
            ParamKind::FfnW1 => "W1",
            ParamKind::FfnW3 => "W3",
            ParamKind::FfnW2 => "W2",
            ParamKind::LayerNorm => "norm",
            ParamKind::NonLayer => "other",
        }
    }

    /// Canonical config-file spelling (the serde snake_case name).
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::AttnQ => "attn_q",
            ParamKind::AttnK => "attn_k",
            ParamKind::AttnV => "attn_v",
            ParamKind::AttnO => "attn_o",
            ParamKind::FfnW1 => "ffn_w1",
            ParamKind::FfnW3 => "ffn_w3",
            ParamKind::FfnW2 => "ffn_w2",
            ParamKind::LayerNorm => "layer_norm",
            ParamKind::NonLayer => "non_layer",
        }
    }
}

/// Classification of one tensor name. `layer` is present iff the kind
/// carries a layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLocus {
    pub kind: ParamKind,
    pub layer: Option<usize>,
}

impl ParamLocus {
    pub const NON_LAYER: ParamLocus = ParamLocus {
        kind: ParamKind::NonLayer,
        layer: None,
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRule {
    pattern: String,
    kind: ParamKind,
}

#[derive(Debug, Clone)]
struct Rule {
    pattern: String,
    kind: ParamKind,
    // pattern split around the "{layer}" placeholder; None for plain rules
    capture: Option<(String, String)>,
}

/// Ordered first-match-wins name rules. Each pattern is an anchored literal
/// that may contain one `{layer}` placeholder capturing a decimal layer
/// index. Names matching no rule classify as `NonLayer`.
#[derive(Debug, Clone)]
pub struct NamingScheme {
    rules: Vec<Rule>,
}

const PLACEHOLDER: &str = "{layer}";

/// The built-in scheme for Llama-style module names
/// (`model.layers.<l>.self_attn.q_proj.weight`, ...).
const DEFAULT_RULES: &[(&str, ParamKind)] = &[
    ("model.layers.{layer}.self_attn.q_proj.weight", ParamKind::AttnQ),
    ("model.layers.{layer}.self_attn.k_proj.weight", ParamKind::AttnK),
    ("model.layers.{layer}.self_attn.v_proj.weight", ParamKind::AttnV),
    ("model.layers.{layer}.self_attn.o_proj.weight", ParamKind::AttnO),
    ("model.layers.{layer}.mlp.gate_proj.weight", ParamKind::FfnW1),
    ("model.layers.{layer}.mlp.up_proj.weight", ParamKind::FfnW3),
    ("model.layers.{layer}.mlp.down_proj.weight", ParamKind::FfnW2),
    ("model.layers.{layer}.input_layernorm.weight", ParamKind::LayerNorm),
    (
        "model.layers.{layer}.post_attention_layernorm.weight",
        ParamKind::LayerNorm,
    ),
];

impl Default for NamingScheme {
    fn default() -> Self {
        let raw: Vec<RawRule> = DEFAULT_RULES
            .iter()
            .map(|(pattern, kind)| RawRule {
                pattern: (*pattern).to_string(),
                kind: *kind,
            })
            .collect();
        Self::from_rules(raw).expect("built-in scheme is well-formed")
    }
}

impl NamingScheme {
    fn from_rules(raw: Vec<RawRule>) -> Result<Self> {
        let mut rules = Vec::with_capacity(raw.len());
        for RawRule { pattern, kind } in raw {
            let capture = match pattern.match_indices(PLACEHOLDER).count() {
                0 => {
                    if kind.carries_layer() {
                        return Err(Error::MalformedScheme(format!(
                            "pattern {pattern:?} maps to layered kind {} but has no {{layer}} placeholder",
                            kind.as_str()
                        )));
                    }
                    None
                }
                1 => {
                    let at = pattern.find(PLACEHOLDER).expect("counted above");
                    Some((
                        pattern[..at].to_string(),
                        pattern[at + PLACEHOLDER.len()..].to_string(),
                    ))
                }
                n => {
                    return Err(Error::MalformedScheme(format!(
                        "pattern {pattern:?} has {n} {{layer}} placeholders, expected at most one"
                    )))
                }
            };
            rules.push(Rule {
                pattern,
                kind,
                capture,
            });
        }
        Ok(Self { rules })
    }

    /// Parses a scheme config: a JSON array of `{"pattern", "kind"}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<RawRule> = serde_json::from_str(text)
            .map_err(|e| Error::MalformedScheme(format!("bad scheme JSON: {e}")))?;
        Self::from_rules(raw)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<RawRule> = self
            .rules
            .iter()
            .map(|r| RawRule {
                pattern: r.pattern.clone(),
                kind: r.kind,
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("scheme serializes")
    }

    /// Classifies one tensor name. Pure: first matching rule wins, unmatched
    /// names map to `NonLayer`.
    pub fn classify(&self, name: &str) -> Result<ParamLocus> {
        for rule in &self.rules {
            match &rule.capture {
                None => {
                    if rule.pattern == name {
                        return Ok(ParamLocus {
                            kind: rule.kind,
                            layer: None,
                        });
                    }
                }
                Some((prefix, suffix)) => {
                    if name.len() <= prefix.len() + suffix.len()
                        || !name.starts_with(prefix.as_str())
                        || !name.ends_with(suffix.as_str())
                    {
                        continue;
                    }
                    let mid = &name[prefix.len()..name.len() - suffix.len()];
                    if !mid.bytes().all(|b| b.is_ascii_digit()) {
                        continue;
                    }
                    let layer: usize = mid.parse().map_err(|_| {
                        Error::MalformedScheme(format!(
                            "pattern {:?} captured unparseable layer index {mid:?} in {name:?}",
                            rule.pattern
                        ))
                    })?;
                    return Ok(ParamLocus {
                        kind: rule.kind,
                        layer: if rule.kind.carries_layer() {
                            Some(layer)
                        } else {
                            None
                        },
                    });
                }
            }
        }
        Ok(ParamLocus::NON_LAYER)
    }
}

/// Layer count of a checkpoint: 1 + the maximum observed layer index.
/// Errors when no name carries a layer index or when the observed indices
/// are not exactly `{0, …, L−1}`.
pub fn layer_count(src: &dyn TensorSource, scheme: &NamingScheme) -> Result<usize> {
    let mut seen = BTreeSet::new();
    for name in src.names() {
        if let Some(layer) = scheme.classify(&name)?.layer {
            seen.insert(layer);
        }
    }
    let max = *seen.iter().next_back().ok_or(Error::NoLayeredTensors)?;
    let missing: Vec<usize> = (0..=max).filter(|l| !seen.contains(l)).collect();
    if !missing.is_empty() {
        return Err(Error::LayerGap { missing, max });
    }
    Ok(max + 1)
}

/// The (layer, kind) cell enumeration behind the analysis grid, ordered
/// bottom-to-top by layer then by grid column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCells {
    pub layer_count: usize,
    /// Cells backed by a rank-2 tensor in the checkpoint.
    pub present: Vec<(usize, ParamKind)>,
    /// Cells of the full L×7 grid with no rank-2 tensor.
    pub missing: Vec<(usize, ParamKind)>,
}

/// Enumerates all L×7 grid cells, splitting them into present (a rank-2
/// tensor classifies there) and missing.
pub fn grid_cells(src: &dyn TensorSource, scheme: &NamingScheme) -> Result<GridCells> {
    let layers = layer_count(src, scheme)?;
    let mut found = BTreeSet::new();
    for name in src.names() {
        let locus = scheme.classify(&name)?;
        let (kind, Some(layer)) = (locus.kind, locus.layer) else {
            continue;
        };
        if !kind.is_grid() {
            continue;
        }
        let info = src.info(&name).expect("name from index");
        if info.rank() == 2 {
            found.insert((layer, kind));
        }
    }
    let mut present = Vec::with_capacity(layers * 7);
    let mut missing = Vec::new();
    for layer in 0..layers {
        for kind in ParamKind::GRID {
            if found.contains(&(layer, kind)) {
                present.push((layer, kind));
            } else {
                missing.push((layer, kind));
            }
        }
    }
    Ok(GridCells {
        layer_count: layers,
        present,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Checkpoint, DType, TensorRecord};

    fn classify(name: &str) -> ParamLocus {
        NamingScheme::default().classify(name).unwrap()
    }

    #[test]
    fn default_scheme_reads_llama_names() {
        assert_eq!(
            classify("model.layers.12.self_attn.q_proj.weight"),
            ParamLocus {
                kind: ParamKind::AttnQ,
                layer: Some(12)
            }
        );
        assert_eq!(
            classify("model.layers.3.post_attention_layernorm.weight"),
            ParamLocus {
                kind: ParamKind::LayerNorm,
                layer: Some(3)
            }
        );
        assert_eq!(classify("model.embed_tokens.weight"), ParamLocus::NON_LAYER);
        assert_eq!(classify("lm_head.weight"), ParamLocus::NON_LAYER);
    }

    #[test]
    fn non_numeric_layer_segment_does_not_match() {
        assert_eq!(
            classify("model.layers.x.self_attn.q_proj.weight"),
            ParamLocus::NON_LAYER
        );
        // An empty capture is not a match either.
        assert_eq!(
            classify("model.layers..self_attn.q_proj.weight"),
            ParamLocus::NON_LAYER
        );
    }

    #[test]
    fn overflowing_layer_capture_is_a_scheme_error() {
        let name = format!("model.layers.{}.self_attn.q_proj.weight", "9".repeat(40));
        assert!(matches!(
            NamingScheme::default().classify(&name),
            Err(Error::MalformedScheme(_))
        ));
    }

    #[test]
    fn layered_kind_without_placeholder_is_rejected() {
        let json = r#"[{"pattern": "weights.q", "kind": "attn_q"}]"#;
        assert!(matches!(
            NamingScheme::from_json(json),
            Err(Error::MalformedScheme(_))
        ));
    }

    #[test]
    fn first_match_wins() {
        let json = r#"[
            {"pattern": "w.{layer}.q", "kind": "attn_q"},
            {"pattern": "w.{layer}.q", "kind": "attn_k"}
        ]"#;
        let scheme = NamingScheme::from_json(json).unwrap();
        assert_eq!(scheme.classify("w.4.q").unwrap().kind, ParamKind::AttnQ);
    }

    #[test]
    fn scheme_json_roundtrip() {
        let scheme = NamingScheme::default();
        let again = NamingScheme::from_json(&scheme.to_json()).unwrap();
        assert_eq!(
            again.classify("model.layers.7.mlp.up_proj.weight").unwrap(),
            ParamLocus {
                kind: ParamKind::FfnW3,
                layer: Some(7)
            }
        );
    }

    fn layered_ckpt(layers: &[usize]) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for l in layers {
            for (suffix, cols) in [("self_attn.q_proj", 2usize), ("mlp.up_proj", 2)] {
                let name = format!("model.layers.{l}.{suffix}.weight");
                ck.insert(
                    TensorRecord::from_f32(name, DType::F32, vec![2, cols], &[0.0; 4]).unwrap(),
                );
            }
        }
        ck.insert(TensorRecord::from_f32("model.embed_tokens.weight", DType::F32, vec![2, 2], &[0.0; 4]).unwrap());
        ck
    }

    #[test]
    fn layer_count_requires_contiguous_indices() {
        let scheme = NamingScheme::default();
        assert_eq!(layer_count(&layered_ckpt(&[0, 1, 2, 3]), &scheme).unwrap(), 4);
        match layer_count(&layered_ckpt(&[0, 1, 3]), &scheme) {
            Err(Error::LayerGap { missing, max }) => {
                assert_eq!(missing, vec![2]);
                assert_eq!(max, 3);
            }
            other => panic!("expected LayerGap, got {other:?}"),
        }
        let mut no_layers = Checkpoint::new();
        no_layers.insert(
            TensorRecord::from_f32("model.embed_tokens.weight", DType::F32, vec![1], &[0.0]).unwrap(),
        );
        assert!(matches!(
            layer_count(&no_layers, &scheme),
            Err(Error::NoLayeredTensors)
        ));
    }

    #[test]
    fn grid_reports_missing_cells() {
        let scheme = NamingScheme::default();
        let cells = grid_cells(&layered_ckpt(&[0, 1]), &scheme).unwrap();
        assert_eq!(cells.layer_count, 2);
        assert_eq!(cells.present.len() + cells.missing.len(), 14);
        assert_eq!(cells.present.len(), 4); // q + up per layer
        assert_eq!(cells.present[0], (0, ParamKind::AttnQ));
    }
}
