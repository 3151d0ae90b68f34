//! Deterministic synthetic checkpoint triples (base, task-like expert,
//! language-like expert) for tests, demos and scale runs.
//!
//! Expert deltas follow the magnitude patterns the analysis grid is built
//! to expose: the task expert changes attention and feed-forward rows in
//! the upper half of the stack, the language expert changes attention rows
//! in the bottom and top layers. Roughly one row in seven is left exactly
//! unchanged so row-level operations see both kinds of rows.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::store::{Checkpoint, CheckpointWriter, DType, MemorySink, TensorInfo, TensorSink};
use crate::topology::{NamingScheme, ParamKind};

/// Shape and seed parameters of a synthetic model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub layers: usize,
    pub hidden: usize,
    /// Rows of the four attention projection matrices.
    pub proj: usize,
    /// Feed-forward inner dimension.
    pub ffn: usize,
    /// Vocabulary rows of the embedding and output head.
    pub vocab: usize,
    pub dtype: DType,
    pub seed: u64,
}

impl FixtureSpec {
    /// Proportional dimensions from a hidden size.
    pub fn new(seed: u64, layers: usize, hidden: usize) -> Self {
        Self {
            layers,
            hidden,
            proj: hidden,
            ffn: 2 * hidden,
            vocab: 4 * hidden,
            dtype: DType::F32,
            seed,
        }
    }

    /// The 4-layer, 8-hidden fixture used throughout the test suites.
    pub fn small(seed: u64) -> Self {
        Self::new(seed, 4, 8)
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }
}

/// Which member of the triple to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureRole {
    Base,
    TaskExpert,
    LangExpert,
}

impl FixtureRole {
    pub fn file_stem(self) -> &'static str {
        match self {
            FixtureRole::Base => "pre",
            FixtureRole::TaskExpert => "task",
            FixtureRole::LangExpert => "lang",
        }
    }

    fn stream(self) -> u64 {
        match self {
            FixtureRole::Base => 0,
            FixtureRole::TaskExpert => 1,
            FixtureRole::LangExpert => 2,
        }
    }
}

/// Tensor layout of the synthetic model, lexicographic by name.
pub fn fixture_plan(spec: &FixtureSpec) -> Vec<(String, DType, Vec<usize>)> {
    let mut plan: Vec<(String, DType, Vec<usize>)> = Vec::new();
    plan.push(("lm_head.weight".into(), spec.dtype, vec![spec.vocab, spec.hidden]));
    plan.push(("model.embed_tokens.weight".into(), spec.dtype, vec![spec.vocab, spec.hidden]));
    plan.push(("model.norm.weight".into(), spec.dtype, vec![spec.hidden]));
    for l in 0..spec.layers {
        let layer = |part: &str, shape: Vec<usize>| {
            (format!("model.layers.{l}.{part}.weight"), spec.dtype, shape)
        };
        plan.push(layer("input_layernorm", vec![spec.hidden]));
        plan.push(layer("mlp.down_proj", vec![spec.hidden, spec.ffn]));
        plan.push(layer("mlp.gate_proj", vec![spec.ffn, spec.hidden]));
        plan.push(layer("mlp.up_proj", vec![spec.ffn, spec.hidden]));
        plan.push(layer("post_attention_layernorm", vec![spec.hidden]));
        plan.push(layer("self_attn.k_proj", vec![spec.proj, spec.hidden]));
        plan.push(layer("self_attn.o_proj", vec![spec.proj, spec.hidden]));
        plan.push(layer("self_attn.q_proj", vec![spec.proj, spec.hidden]));
        plan.push(layer("self_attn.v_proj", vec![spec.proj, spec.hidden]));
    }
    plan.sort_by(|a, b| a.0.cmp(&b.0));
    plan
}

fn fnv1a64(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Independent stream per (seed, tensor, purpose), so generation order
/// never affects the values.
fn tensor_rng(seed: u64, name: &str, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(name).to_le_bytes());
    key[16..24].copy_from_slice(&stream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Mean delta magnitude per dtype, scaled so quantization to the storage
/// type does not swallow the strong rows.
fn base_delta_scale(dtype: DType) -> f32 {
    match dtype {
        DType::F32 => 2e-4,
        DType::F16 => 2e-3,
        DType::BF16 => 1.5e-2,
    }
}

/// Relative update intensity of a tensor for a given expert, in [0, 1].
fn delta_intensity(role: FixtureRole, kind: ParamKind, layer: Option<usize>, layers: usize) -> f32 {
    let l = layer.unwrap_or(0);
    match role {
        FixtureRole::Base => 0.0,
        FixtureRole::TaskExpert => match kind {
            ParamKind::NonLayer => 0.3,
            ParamKind::LayerNorm => {
                if l >= layers / 2 {
                    0.3
                } else {
                    0.02
                }
            }
            _ => {
                if l >= layers / 2 {
                    1.0
                } else {
                    0.05
                }
            }
        },
        FixtureRole::LangExpert => {
            let edge = l < 2.min(layers) || l + 2 >= layers;
            match kind {
                ParamKind::NonLayer => 0.3,
                ParamKind::LayerNorm => {
                    if edge {
                        0.3
                    } else {
                        0.02
                    }
                }
                ParamKind::AttnQ | ParamKind::AttnK | ParamKind::AttnV | ParamKind::AttnO => {
                    if edge {
                        1.0
                    } else {
                        0.08
                    }
                }
                _ => {
                    if l + 1 == layers {
                        0.4
                    } else {
                        0.01
                    }
                }
            }
        }
    }
}

/// Quantizes a value through the storage dtype.
fn through_dtype(dtype: DType, v: f32) -> f32 {
    match dtype {
        DType::F32 => v,
        DType::F16 => half::f16::from_f32(v).to_f32(),
        DType::BF16 => half::bf16::from_f32(v).to_f32(),
    }
}

/// Generates one tensor's payload for a role and streams it to `emit` in
/// row blocks.
fn generate_tensor(
    spec: &FixtureSpec,
    role: FixtureRole,
    name: &str,
    info: &TensorInfo,
    scheme: &NamingScheme,
    emit: &mut dyn FnMut(&[u8]) -> Result<()>,
) -> Result<()> {
    let (rows, row_elems) = info.rows().expect("fixture tensors are rank 1 or 2");
    let locus = scheme.classify(name).expect("fixture names classify");
    let intensity = delta_intensity(role, locus.kind, locus.layer, spec.layers);
    let scale = intensity * base_delta_scale(spec.dtype);

    let mut base_rng = tensor_rng(spec.seed, name, FixtureRole::Base.stream());
    let mut delta_rng = tensor_rng(spec.seed, name, role.stream());

    // Buffer a few thousand rows at a time to bound memory on large shapes.
    let rows_per_block = (1 << 20) / row_elems.max(1) + 1;
    let mut values = Vec::with_capacity(rows_per_block * row_elems);
    let mut encoded = Vec::new();

    let mut row = 0usize;
    while row < rows {
        let block = rows_per_block.min(rows - row);
        values.clear();
        for _ in 0..block {
            let row_scale = if role == FixtureRole::Base {
                0.0
            } else {
                let gate: f32 = delta_rng.random_range(0.0..1.0);
                if gate < 0.15 {
                    0.0
                } else {
                    scale * delta_rng.random_range(0.5..1.5)
                }
            };
            for _ in 0..row_elems {
                let base = through_dtype(spec.dtype, base_rng.random_range(-0.05f32..0.05));
                let v = if row_scale == 0.0 {
                    base
                } else {
                    base + row_scale * delta_rng.random_range(-1.0f32..1.0)
                };
                values.push(v);
            }
        }
        encoded.clear();
        spec.dtype.encode_f32_into(&values, &mut encoded);
        emit(&encoded)?;
        row += block;
    }
    Ok(())
}

fn generate_into(spec: &FixtureSpec, role: FixtureRole, sink: &mut dyn TensorSink) -> Result<()> {
    let scheme = NamingScheme::default();
    for (name, dtype, shape) in fixture_plan(spec) {
        let info = TensorInfo::new(dtype, shape.clone());
        sink.begin_tensor(&name, dtype, &shape)?;
        generate_tensor(spec, role, &name, &info, &scheme, &mut |bytes| {
            sink.write_chunk(bytes)
        })?;
        sink.end_tensor()?;
    }
    Ok(())
}

/// Builds one member of the triple in memory.
pub fn fixture_checkpoint(spec: &FixtureSpec, role: FixtureRole) -> Checkpoint {
    let mut sink = MemorySink::new();
    generate_into(spec, role, &mut sink).expect("memory sink does not fail");
    sink.into_checkpoint()
}

/// Streams one member of the triple to a container file. Re-running with
/// the same spec produces byte-identical output.
pub fn write_fixture(spec: &FixtureSpec, role: FixtureRole, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = CheckpointWriter::create(path, fixture_plan(spec), None)?;
    generate_into(spec, role, &mut writer)?;
    writer.finish()
}

/// Writes `pre.safetensors`, `task.safetensors` and `lang.safetensors`
/// under `dir`, returning the three paths.
pub fn write_fixture_triple(
    spec: &FixtureSpec,
    dir: impl AsRef<Path>,
) -> Result<[std::path::PathBuf; 3]> {
    let dir = dir.as_ref();
    let roles = [FixtureRole::Base, FixtureRole::TaskExpert, FixtureRole::LangExpert];
    let mut paths = Vec::with_capacity(3);
    for role in roles {
        let path = dir.join(format!("{}.safetensors", role.file_stem()));
        write_fixture(spec, role, &path)?;
        paths.push(path);
    }
    Ok(paths.try_into().expect("three roles"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{diff_max, validate_compat, TensorSource};
    use crate::topology::{grid_cells, layer_count};

    #[test]
    fn triple_is_structurally_compatible() {
        let spec = FixtureSpec::small(7);
        let base = fixture_checkpoint(&spec, FixtureRole::Base);
        let task = fixture_checkpoint(&spec, FixtureRole::TaskExpert);
        let lang = fixture_checkpoint(&spec, FixtureRole::LangExpert);
        assert!(validate_compat(&base, &task).is_ok());
        assert!(validate_compat(&base, &lang).is_ok());
        let scheme = NamingScheme::default();
        assert_eq!(layer_count(&base, &scheme).unwrap(), 4);
        let cells = grid_cells(&base, &scheme).unwrap();
        assert_eq!(cells.present.len(), 28);
        assert!(cells.missing.is_empty());
    }

    #[test]
    fn experts_differ_from_base() {
        let spec = FixtureSpec::small(11);
        let base = fixture_checkpoint(&spec, FixtureRole::Base);
        for role in [FixtureRole::TaskExpert, FixtureRole::LangExpert] {
            let expert = fixture_checkpoint(&spec, role);
            let total: f32 = diff_max(&base, &expert).unwrap().values().sum();
            assert!(total > 0.0, "{role:?} expert is identical to base");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = FixtureSpec::small(3);
        let a = fixture_checkpoint(&spec, FixtureRole::TaskExpert);
        let b = fixture_checkpoint(&spec, FixtureRole::TaskExpert);
        for (name, rec) in a.iter() {
            assert_eq!(rec.data, b.get(name).unwrap().data);
        }
    }

    #[test]
    fn seeds_change_the_data() {
        let a = fixture_checkpoint(&FixtureSpec::small(1), FixtureRole::Base);
        let b = fixture_checkpoint(&FixtureSpec::small(2), FixtureRole::Base);
        let differs = a
            .iter()
            .any(|(name, rec)| rec.data != b.get(name.as_str()).unwrap().data);
        assert!(differs);
    }

    #[test]
    fn half_precision_fixtures_keep_expert_deltas() {
        for dtype in [DType::F16, DType::BF16] {
            let spec = FixtureSpec::small(5).with_dtype(dtype);
            let base = fixture_checkpoint(&spec, FixtureRole::Base);
            let task = fixture_checkpoint(&spec, FixtureRole::TaskExpert);
            let total: f32 = diff_max(&base, &task).unwrap().values().sum();
            assert!(total > 0.0, "{dtype} task expert identical to base");
        }
    }

    #[test]
    fn file_and_memory_generation_agree() {
        let spec = FixtureSpec::small(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.safetensors");
        write_fixture(&spec, FixtureRole::TaskExpert, &path).unwrap();
        let from_file = crate::store::CheckpointReader::open(&path).unwrap().load().unwrap();
        let in_memory = fixture_checkpoint(&spec, FixtureRole::TaskExpert);
        for (name, rec) in in_memory.iter() {
            assert_eq!(rec.data, from_file.get(name).unwrap().data, "{name}");
        }
    }
}
