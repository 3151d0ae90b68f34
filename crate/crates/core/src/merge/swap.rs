//! Layer swapping: re-composing a model from a task expert and a language
//! expert, with optional transition zones of weighted-average layers.

use serde::{Deserialize, Serialize};

use crate::delta::{delta_row_mavs, expert_weight};
use crate::error::{Error, Result};
use crate::merge::{average_pair_tensor, copy_tensor, plan_of};
use crate::store::{require_compat, Checkpoint, MemorySink, TensorSink, TensorSource};
use crate::topology::{layer_count, NamingScheme, ParamKind, ParamLocus};

/// How per-layer norm tensors are routed during a swap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormRouting {
    /// Norms travel with their transformer layer.
    #[default]
    FollowLayer,
    /// Norms are weighted-averaged regardless of layer role.
    Average,
}

/// How tensors outside the transformer layers (embeddings, final norm,
/// output head) are routed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonLayerRouting {
    /// Weighted average of both experts.
    #[default]
    Average,
    FromTask,
    FromLang,
}

/// Swap geometry and blending weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwapConfig {
    /// Bottom layers taken from the language expert.
    pub bottom: usize,
    /// Top layers taken from the language expert.
    pub top: usize,
    /// Transition layers directly above the bottom swap.
    pub lower_transition: usize,
    /// Transition layers directly below the top swap.
    pub upper_transition: usize,
    pub alpha_task: f32,
    pub alpha_lang: f32,
    pub norm_routing: NormRouting,
    pub non_layer_routing: NonLayerRouting,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            bottom: 5,
            top: 2,
            lower_transition: 0,
            upper_transition: 0,
            alpha_task: 1.0,
            alpha_lang: 1.0,
            norm_routing: NormRouting::default(),
            non_layer_routing: NonLayerRouting::default(),
        }
    }
}

impl SwapConfig {
    /// Checks the config against a concrete layer count.
    pub fn validate(&self, layers: usize) -> Result<()> {
        let claimed = self.bottom + self.lower_transition + self.top + self.upper_transition;
        if claimed > layers {
            return Err(Error::InvalidConfig(format!(
                "bottom({}) + lower_transition({}) + upper_transition({}) + top({}) = {claimed} exceeds {layers} layers",
                self.bottom, self.lower_transition, self.upper_transition, self.top
            )));
        }
        for (label, a) in [("alpha_task", self.alpha_task), ("alpha_lang", self.alpha_lang)] {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{label} must be finite and non-negative, got {a}"
                )));
            }
        }
        if self.alpha_task + self.alpha_lang <= 0.0 {
            return Err(Error::InvalidConfig(
                "alpha_task + alpha_lang must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Role of one transformer layer in a swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Lang,
    Task,
    Transition,
}

/// Per-layer role map. The three role sets partition `{0, …, L−1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerAssignment {
    roles: Vec<LayerRole>,
}

impl LayerAssignment {
    pub fn layer_count(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, layer: usize) -> LayerRole {
        self.roles[layer]
    }

    pub fn layers_with(&self, role: LayerRole) -> Vec<usize> {
        (0..self.roles.len()).filter(|&l| self.roles[l] == role).collect()
    }

    /// Compact `lang=[0-4,30-31] task=[5-29] transition=[]` rendering.
    pub fn summary(&self) -> String {
        format!(
            "lang={} task={} transition={}",
            format_ranges(&self.layers_with(LayerRole::Lang)),
            format_ranges(&self.layers_with(LayerRole::Task)),
            format_ranges(&self.layers_with(LayerRole::Transition)),
        )
    }
}

/// Renders a sorted index list as `[0-4,30-31]`.
pub fn format_ranges(layers: &[usize]) -> String {
    let mut out = String::from("[");
    let mut i = 0;
    while i < layers.len() {
        let start = layers[i];
        let mut end = start;
        while i + 1 < layers.len() && layers[i + 1] == end + 1 {
            i += 1;
            end = layers[i];
        }
        if out.len() > 1 {
            out.push(',');
        }
        if start == end {
            out.push_str(&start.to_string());
        } else {
            out.push_str(&format!("{start}-{end}"));
        }
        i += 1;
    }
    out.push(']');
    out
}

/// Partitions layers into language / task / transition roles.
///
/// A layer is a language layer when `l < bottom` or `l > L−1−top`; a task
/// layer when `l ≥ bottom + lower_transition` AND
/// `l ≤ L−1−top−upper_transition`; everything between is transition. The
/// task test intersects both bounds — an either-or reading would leave the
/// transition branch unreachable for every valid configuration.
pub fn assign_layers(cfg: &SwapConfig, layers: usize) -> Result<LayerAssignment> {
    cfg.validate(layers)?;
    let roles = (0..layers)
        .map(|l| {
            if l < cfg.bottom || l + cfg.top >= layers {
                LayerRole::Lang
            } else if l >= cfg.bottom + cfg.lower_transition
                && l + cfg.top + cfg.upper_transition < layers
            {
                LayerRole::Task
            } else {
                LayerRole::Transition
            }
        })
        .collect();
    Ok(LayerAssignment { roles })
}

/// Where one tensor's bytes come from during a swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Route {
    CopyTask,
    CopyLang,
    Average,
}

pub(crate) fn route_for(locus: &ParamLocus, assignment: &LayerAssignment, cfg: &SwapConfig) -> Route {
    match (locus.kind, locus.layer) {
        (ParamKind::NonLayer, _) | (_, None) => match cfg.non_layer_routing {
            NonLayerRouting::Average => Route::Average,
            NonLayerRouting::FromTask => Route::CopyTask,
            NonLayerRouting::FromLang => Route::CopyLang,
        },
        (ParamKind::LayerNorm, Some(_)) if cfg.norm_routing == NormRouting::Average => {
            Route::Average
        }
        (_, Some(layer)) => match assignment.role(layer) {
            LayerRole::Lang => Route::CopyLang,
            LayerRole::Task => Route::CopyTask,
            LayerRole::Transition => Route::Average,
        },
    }
}

/// Streams a layer-swapped merge into `sink`: language layers bit-copied
/// from `lang`, task layers bit-copied from `task`, transition layers and
/// average-routed tensors blended with `(alpha_task, alpha_lang)`.
pub fn layer_swap_into(
    task: &dyn TensorSource,
    lang: &dyn TensorSource,
    cfg: &SwapConfig,
    scheme: &NamingScheme,
    sink: &mut dyn TensorSink,
) -> Result<()> {
    require_compat(task, lang)?;
    let layers = layer_count(task, scheme)?;
    let assignment = assign_layers(cfg, layers)?;
    let (w_task, w_lang) = (cfg.alpha_task as f64, cfg.alpha_lang as f64);

    for name in task.names() {
        let info = task.info(&name).expect("name from index");
        let locus = scheme.classify(&name)?;
        match route_for(&locus, &assignment, cfg) {
            Route::CopyTask => copy_tensor(task, &name, &info, sink)?,
            Route::CopyLang => copy_tensor(lang, &name, &info, sink)?,
            Route::Average => {
                average_pair_tensor(task, lang, &name, &info, w_task, w_lang, sink)?
            }
        }
    }
    Ok(())
}

/// In-memory convenience wrapper around [`layer_swap_into`].
pub fn layer_swap(
    task: &dyn TensorSource,
    lang: &dyn TensorSource,
    cfg: &SwapConfig,
    scheme: &NamingScheme,
) -> Result<Checkpoint> {
    let mut sink = MemorySink::new();
    layer_swap_into(task, lang, cfg, scheme, &mut sink)?;
    Ok(sink.into_checkpoint())
}

/// Magnitude-adjusted transition weights: each expert's alpha is the
/// inverse of its aggregate delta MAV against a shared base checkpoint (the
/// same weighting rule as the weighted soup).
pub fn magnitude_alphas(
    base: &dyn TensorSource,
    task: &dyn TensorSource,
    lang: &dyn TensorSource,
    scheme: &NamingScheme,
) -> Result<(f32, f32)> {
    let w_task = expert_weight(&delta_row_mavs(base, task, scheme)?)?;
    let w_lang = expert_weight(&delta_row_mavs(base, lang, scheme)?)?;
    Ok((w_task, w_lang))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bottom: usize, top: usize, lower: usize, upper: usize) -> SwapConfig {
        SwapConfig {
            bottom,
            top,
            lower_transition: lower,
            upper_transition: upper,
            ..SwapConfig::default()
        }
    }

    #[test]
    fn default_geometry_on_32_layers() {
        let assignment = assign_layers(&SwapConfig::default(), 32).unwrap();
        assert_eq!(
            assignment.layers_with(LayerRole::Lang),
            vec![0, 1, 2, 3, 4, 30, 31]
        );
        assert_eq!(
            assignment.layers_with(LayerRole::Task),
            (5..=29).collect::<Vec<_>>()
        );
        assert!(assignment.layers_with(LayerRole::Transition).is_empty());
    }

    #[test]
    fn transition_zones_sit_between_swapped_regions() {
        let assignment = assign_layers(&cfg(5, 2, 2, 2), 32).unwrap();
        assert_eq!(
            assignment.layers_with(LayerRole::Lang),
            vec![0, 1, 2, 3, 4, 30, 31]
        );
        assert_eq!(
            assignment.layers_with(LayerRole::Transition),
            vec![5, 6, 28, 29]
        );
        assert_eq!(
            assignment.layers_with(LayerRole::Task),
            (7..=27).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_swap_keeps_every_layer_task() {
        let assignment = assign_layers(&cfg(0, 0, 0, 0), 8).unwrap();
        assert_eq!(assignment.layers_with(LayerRole::Task).len(), 8);
    }

    #[test]
    fn partition_covers_all_layers_exactly_once() {
        for (b, u, tb, tu, layers) in [(5, 2, 2, 2, 32), (3, 0, 1, 2, 8), (2, 2, 2, 2, 8), (0, 0, 0, 0, 4)] {
            let assignment = assign_layers(&cfg(b, u, tb, tu), layers).unwrap();
            let mut count = 0;
            for role in [LayerRole::Lang, LayerRole::Task, LayerRole::Transition] {
                count += assignment.layers_with(role).len();
            }
            assert_eq!(count, layers);
        }
    }

    #[test]
    fn oversubscribed_config_is_rejected() {
        assert!(matches!(
            assign_layers(&cfg(20, 20, 0, 0), 32),
            Err(Error::InvalidConfig(_))
        ));
        assert!(assign_layers(&cfg(20, 12, 0, 0), 32).is_ok());
    }

    #[test]
    fn zero_alpha_sum_is_rejected() {
        let bad = SwapConfig {
            alpha_task: 0.0,
            alpha_lang: 0.0,
            ..SwapConfig::default()
        };
        assert!(matches!(bad.validate(32), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn range_formatting() {
        assert_eq!(format_ranges(&[0, 1, 2, 3, 4, 30, 31]), "[0-4,30-31]");
        assert_eq!(format_ranges(&[]), "[]");
        assert_eq!(format_ranges(&[7]), "[7]");
    }
}
