//! Declarative merge recipes: a JSON description of any merge run, with a
//! file-based executor behind every strategy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{
    self, format_ranges, normalized_weights, SwapConfig, TiesConfig,
};
use crate::store::{CheckpointReader, CheckpointWriter, TensorSource};
use crate::topology::{layer_count, NamingScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LayerSwap,
    Soup,
    MavSoup,
    Ties,
    Sparsify,
    RevertLayers,
}

/// A fully declarative merge run: strategy, role→path inputs, strategy
/// parameters, output path and optional naming-scheme file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeRecipe {
    pub strategy: Strategy,
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub params: serde_json::Value,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SwapParams {
    #[serde(flatten)]
    pub config: SwapConfig,
    /// Derive (alpha_task, alpha_lang) from each expert's aggregate delta
    /// MAV against the `base` input.
    pub magnitude_alphas: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SoupParams {
    pub weights: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsifyParams {
    pub threshold: f32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RevertParams {
    pub layers: Vec<usize>,
}

impl MergeRecipe {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("bad recipe JSON: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    fn params_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        let value = if self.params.is_null() {
            serde_json::Value::Object(serde_json::Map::new())
        } else {
            self.params.clone()
        };
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(format!("bad recipe params: {e}")))
    }

    fn input(&self, role: &str) -> Result<&str> {
        self.inputs
            .get(role)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidConfig(format!("recipe is missing input role {role:?}")))
    }

    /// Ordered expert paths from `expert0`, `expert1`, … roles.
    fn expert_inputs(&self) -> Result<Vec<&str>> {
        let mut indexed: Vec<(usize, &str)> = Vec::new();
        for (role, path) in &self.inputs {
            if let Some(digits) = role.strip_prefix("expert") {
                let i: usize = digits.parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad expert role {role:?}; use expert0, expert1, …"))
                })?;
                indexed.push((i, path.as_str()));
            }
        }
        indexed.sort_by_key(|&(i, _)| i);
        for (expect, &(i, _)) in indexed.iter().enumerate() {
            if i != expect {
                return Err(Error::InvalidConfig(format!(
                    "expert roles must be contiguous from expert0; missing expert{expect}"
                )));
            }
        }
        if indexed.is_empty() {
            return Err(Error::InvalidConfig("recipe has no expertN inputs".into()));
        }
        Ok(indexed.into_iter().map(|(_, p)| p).collect())
    }

    /// Validates inputs/params and re-serializes the parameters with every
    /// default filled in, yielding the recipe actually executed.
    pub fn resolve(&self) -> Result<MergeRecipe> {
        let mut resolved = self.clone();
        resolved.params = match self.strategy {
            Strategy::LayerSwap => {
                let params: SwapParams = self.params_as()?;
                self.input("task")?;
                self.input("lang")?;
                if params.magnitude_alphas {
                    self.input("base")?;
                }
                serde_json::to_value(&params)
            }
            Strategy::Soup => {
                let params: SoupParams = self.params_as()?;
                let experts = self.expert_inputs()?;
                normalized_weights(experts.len(), params.weights.as_deref())?;
                serde_json::to_value(&params)
            }
            Strategy::MavSoup => {
                self.input("base")?;
                self.expert_inputs()?;
                serde_json::to_value(SoupParams::default())
            }
            Strategy::Ties => {
                let params: TiesConfig = self.params_as()?;
                params.validate()?;
                self.input("base")?;
                self.expert_inputs()?;
                serde_json::to_value(&params)
            }
            Strategy::Sparsify => {
                let params: SparsifyParams = self.params_as()?;
                if !(params.threshold >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "threshold must be non-negative, got {}",
                        params.threshold
                    )));
                }
                self.input("base")?;
                self.input("ft")?;
                serde_json::to_value(&params)
            }
            Strategy::RevertLayers => {
                let params: RevertParams = self.params_as()?;
                self.input("base")?;
                self.input("ft")?;
                serde_json::to_value(&params)
            }
        }
        .expect("params serialize");
        Ok(resolved)
    }

    fn load_scheme(&self) -> Result<NamingScheme> {
        match &self.scheme {
            Some(path) => NamingScheme::from_file(path),
            None => Ok(NamingScheme::default()),
        }
    }

    /// Runs the recipe, writing the merged checkpoint atomically. Returns
    /// human-readable notes about the run (layer assignment, weights used,
    /// kept fractions).
    pub fn execute(&self) -> Result<Vec<String>> {
        let recipe = self.resolve()?;
        let scheme = recipe.load_scheme()?;
        let mut notes = Vec::new();

        match recipe.strategy {
            Strategy::LayerSwap => {
                let params: SwapParams = recipe.params_as()?;
                let task = CheckpointReader::open(recipe.input("task")?)?;
                let lang = CheckpointReader::open(recipe.input("lang")?)?;
                let mut cfg = params.config;
                if params.magnitude_alphas {
                    let base = CheckpointReader::open(recipe.input("base")?)?;
                    let (a_task, a_lang) =
                        merge::magnitude_alphas(&base, &task, &lang, &scheme)?;
                    cfg.alpha_task = a_task;
                    cfg.alpha_lang = a_lang;
                    notes.push(format!(
                        "magnitude alphas: alpha_task={a_task:.6e} alpha_lang={a_lang:.6e}"
                    ));
                }
                let layers = layer_count(&task, &scheme)?;
                let assignment = merge::assign_layers(&cfg, layers)?;
                notes.push(format!("layer assignment (L={layers}): {}", assignment.summary()));
                let mut writer =
                    CheckpointWriter::create(&recipe.output, plan(&task), None)?;
                merge::layer_swap_into(&task, &lang, &cfg, &scheme, &mut writer)?;
                writer.finish()?;
            }
            Strategy::Soup => {
                let params: SoupParams = recipe.params_as()?;
                let readers = open_experts(&recipe)?;
                let sources = as_sources(&readers);
                let normalized = normalized_weights(sources.len(), params.weights.as_deref())?;
                notes.push(format!("normalized weights: {}", render_weights(&normalized)));
                let mut writer =
                    CheckpointWriter::create(&recipe.output, plan(&readers[0]), None)?;
                merge::soup_into(&sources, params.weights.as_deref(), &mut writer)?;
                writer.finish()?;
            }
            Strategy::MavSoup => {
                let base = CheckpointReader::open(recipe.input("base")?)?;
                let readers = open_experts(&recipe)?;
                let sources = as_sources(&readers);
                let mut writer =
                    CheckpointWriter::create(&recipe.output, plan(&readers[0]), None)?;
                let weights =
                    merge::mav_weighted_soup_into(&base, &sources, &scheme, &mut writer)?;
                writer.finish()?;
                let normalized = normalized_weights(weights.len(), Some(&weights))?;
                notes.push(format!(
                    "mav weights: {} (normalized {})",
                    render_weights(&weights.iter().map(|&w| w as f64).collect::<Vec<_>>()),
                    render_weights(&normalized)
                ));
            }
            Strategy::Ties => {
                let params: TiesConfig = recipe.params_as()?;
                let base = CheckpointReader::open(recipe.input("base")?)?;
                let readers = open_experts(&recipe)?;
                let sources = as_sources(&readers);
                let mut writer =
                    CheckpointWriter::create(&recipe.output, plan(&base), None)?;
                merge::ties_merge_into(&base, &sources, &params, &mut writer)?;
                writer.finish()?;
                notes.push(format!(
                    "ties: density={} lambda={} experts={}",
                    params.density,
                    params.lambda,
                    sources.len()
                ));
            }
            Strategy::Sparsify => {
                let params: SparsifyParams = recipe.params_as()?;
                let base = CheckpointReader::open(recipe.input("base")?)?;
                let ft = CheckpointReader::open(recipe.input("ft")?)?;
                let mut writer = CheckpointWriter::create(&recipe.output, plan(&ft), None)?;
                let stats =
                    merge::sparsify_rows_into(&base, &ft, params.threshold, &scheme, &mut writer)?;
                writer.finish()?;
                notes.push(format!(
                    "kept {}/{} rows ({:.4})",
                    stats.total_kept(),
                    stats.total_rows(),
                    stats.kept_fraction()
                ));
                for t in &stats.tensors {
                    notes.push(format!(
                        "  {}: kept {}/{} ({:.4})",
                        t.name,
                        t.kept.len(),
                        t.rows,
                        t.kept_fraction()
                    ));
                }
            }
            Strategy::RevertLayers => {
                let params: RevertParams = recipe.params_as()?;
                let base = CheckpointReader::open(recipe.input("base")?)?;
                let ft = CheckpointReader::open(recipe.input("ft")?)?;
                let layers: BTreeSet<usize> = params.layers.iter().copied().collect();
                let mut writer = CheckpointWriter::create(&recipe.output, plan(&ft), None)?;
                merge::revert_layers_into(&ft, &base, &layers, &scheme, &mut writer)?;
                writer.finish()?;
                notes.push(format!(
                    "reverted layers {}",
                    format_ranges(&layers.iter().copied().collect::<Vec<_>>())
                ));
            }
        }
        Ok(notes)
    }
}

fn plan(src: &dyn TensorSource) -> Vec<(String, crate::store::DType, Vec<usize>)> {
    src.names()
        .into_iter()
        .map(|name| {
            let info = src.info(&name).expect("name from index");
            (name, info.dtype, info.shape)
        })
        .collect()
}

fn open_experts(recipe: &MergeRecipe) -> Result<Vec<CheckpointReader>> {
    recipe
        .expert_inputs()?
        .into_iter()
        .map(CheckpointReader::open)
        .collect()
}

fn as_sources(readers: &[CheckpointReader]) -> Vec<&dyn TensorSource> {
    readers.iter().map(|r| r as &dyn TensorSource).collect()
}

fn render_weights(weights: &[f64]) -> String {
    let rendered: Vec<String> = weights.iter().map(|w| format!("{w:.4}")).collect();
    format!("({})", rendered.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_fills_swap_defaults() {
        let recipe = MergeRecipe {
            strategy: Strategy::LayerSwap,
            inputs: [("task", "t.st"), ("lang", "l.st")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            params: serde_json::Value::Null,
            output: "out.st".into(),
            scheme: None,
        };
        let resolved = recipe.resolve().unwrap();
        assert_eq!(resolved.params["bottom"], 5);
        assert_eq!(resolved.params["top"], 2);
        assert_eq!(resolved.params["alpha_task"], 1.0);
        assert_eq!(resolved.params["norm_routing"], "follow_layer");
        assert_eq!(resolved.params["non_layer_routing"], "average");
    }

    #[test]
    fn resolve_rejects_missing_roles() {
        let recipe = MergeRecipe {
            strategy: Strategy::Sparsify,
            inputs: [("base".to_string(), "b.st".to_string())].into_iter().collect(),
            params: serde_json::json!({"threshold": 0.5}),
            output: "out.st".into(),
            scheme: None,
        };
        assert!(matches!(recipe.resolve(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn expert_roles_must_be_contiguous() {
        let recipe = MergeRecipe {
            strategy: Strategy::Soup,
            inputs: [("expert0", "a.st"), ("expert2", "b.st")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            params: serde_json::Value::Null,
            output: "out.st".into(),
            scheme: None,
        };
        assert!(matches!(recipe.resolve(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn recipe_json_roundtrip() {
        let recipe = MergeRecipe {
            strategy: Strategy::Ties,
            inputs: [("base", "b.st"), ("expert0", "e.st")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            params: serde_json::json!({"density": 0.5, "lambda": 1.0}),
            output: "out.st".into(),
            scheme: None,
        };
        let back = MergeRecipe::from_json(&recipe.to_json()).unwrap();
        assert_eq!(back.to_json(), recipe.to_json());
    }
}
