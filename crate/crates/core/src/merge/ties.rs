//! TIES-merging: trim each expert's task vector to its largest-magnitude
//! entries, elect a per-element sign, then average only the values agreeing
//! with the elected sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::plan_of;
use crate::store::{require_compat, Checkpoint, MemorySink, TensorSink, TensorSource};

/// TIES knobs. Trimming is per tensor: each expert keeps the top
/// `ceil(density · K)` of its K delta entries by absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TiesConfig {
    /// Fraction of delta entries kept per task vector, in (0, 1].
    pub density: f64,
    /// Rescale of the merged task vector added back onto the base.
    pub lambda: f64,
}

impl Default for TiesConfig {
    fn default() -> Self {
        Self {
            density: 0.2,
            lambda: 1.0,
        }
    }
}

impl TiesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "density must be in (0, 1], got {}",
                self.density
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Entries kept per tensor. A hair of slack counters f64 products like
/// `0.2 × 10 = 2.0000000000000004` rounding the ceiling up one step.
fn kept_count(density: f64, elements: usize) -> usize {
    let target = density * elements as f64;
    let k = (target * (1.0 - 1e-12)).ceil() as usize;
    k.clamp(1, elements)
}

/// Zeroes all but the `k` largest-magnitude entries. Ties on magnitude keep
/// the lower flat index.
fn trim_in_place(delta: &mut [f32], k: usize) {
    let n = delta.len();
    if k >= n {
        return;
    }
    let mut mags: Vec<f32> = delta.iter().map(|v| v.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let kth = *kth;
    let mut eq_budget = k - delta
        .iter()
        .filter(|v| v.abs().total_cmp(&kth) == std::cmp::Ordering::Greater)
        .count();
    for v in delta.iter_mut() {
        match v.abs().total_cmp(&kth) {
            std::cmp::Ordering::Greater => {}
            std::cmp::Ordering::Equal if eq_budget > 0 => eq_budget -= 1,
            _ => *v = 0.0,
        }
    }
}

/// Streams a TIES merge of one or more experts over a shared base into
/// `sink`. Per tensor and per expert the task vector is `expert − base` in
/// FLOAT32; trim/elect/merge runs per element with f64 sums over ascending
/// expert index, and the result is `base + lambda · merged`.
pub fn ties_merge_into(
    base: &dyn TensorSource,
    experts: &[&dyn TensorSource],
    cfg: &TiesConfig,
    sink: &mut dyn TensorSink,
) -> Result<()> {
    cfg.validate()?;
    if experts.is_empty() {
        return Err(Error::InvalidConfig("ties merge needs at least one expert".into()));
    }
    for expert in experts {
        require_compat(base, *expert)?;
    }

    for (name, dtype, shape) in plan_of(base) {
        let info = crate::store::TensorInfo::new(dtype, shape.clone());
        let base_values = base.read_record(&name)?.to_f32();
        let n = base_values.len();

        let mut deltas: Vec<Vec<f32>> = Vec::with_capacity(experts.len());
        for expert in experts {
            let mut values = expert.read_record(&name)?.to_f32();
            for (v, b) in values.iter_mut().zip(&base_values) {
                *v -= b;
            }
            if n > 0 {
                trim_in_place(&mut values, kept_count(cfg.density, n));
            }
            deltas.push(values);
        }

        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut sum = 0f64;
            for d in &deltas {
                sum += d[i] as f64;
            }
            let mut acc = 0f64;
            let mut count = 0u32;
            if sum > 0.0 {
                for d in &deltas {
                    if d[i] > 0.0 {
                        acc += d[i] as f64;
                        count += 1;
                    }
                }
            } else if sum < 0.0 {
                for d in &deltas {
                    if d[i] < 0.0 {
                        acc += d[i] as f64;
                        count += 1;
                    }
                }
            }
            let merged = if count == 0 { 0.0 } else { acc / count as f64 };
            out.push((base_values[i] as f64 + cfg.lambda * merged) as f32);
        }

        sink.begin_tensor(&name, dtype, &shape)?;
        sink.write_chunk(&info.dtype.encode_f32(&out))?;
        sink.end_tensor()?;
    }
    Ok(())
}

/// In-memory convenience wrapper around [`ties_merge_into`].
pub fn ties_merge(
    base: &dyn TensorSource,
    experts: &[&dyn TensorSource],
    cfg: &TiesConfig,
) -> Result<Checkpoint> {
    let mut sink = MemorySink::new();
    ties_merge_into(base, experts, cfg, &mut sink)?;
    Ok(sink.into_checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{DType, TensorRecord};

    fn ckpt(values: &[f32]) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert(
            TensorRecord::from_f32("t", DType::F32, vec![values.len()], values).unwrap(),
        );
        ck
    }

    fn values(ck: &Checkpoint) -> Vec<f32> {
        ck.get("t").unwrap().to_f32()
    }

    #[test]
    fn worked_two_expert_example() {
        // base zeros; τ1 = [0.1, −0.2, 0.3, 0], τ2 = [−0.1, −0.2, 0.05, 0.4]
        // density 0.5 keeps two entries each → merged [0, −0.2, 0.3, 0.4].
        let base = ckpt(&[0.0; 4]);
        let e1 = ckpt(&[0.1, -0.2, 0.3, 0.0]);
        let e2 = ckpt(&[-0.1, -0.2, 0.05, 0.4]);
        let cfg = TiesConfig {
            density: 0.5,
            lambda: 1.0,
        };
        let merged = ties_merge(&base, &[&e1, &e2], &cfg).unwrap();
        assert_eq!(values(&merged), vec![0.0, -0.2, 0.3, 0.4]);
    }

    #[test]
    fn single_expert_full_density_reproduces_expert() {
        let base = ckpt(&[1.0, -2.0, 3.0]);
        let e = ckpt(&[1.5, -2.25, 2.0]);
        let cfg = TiesConfig {
            density: 1.0,
            lambda: 1.0,
        };
        let merged = ties_merge(&base, &[&e], &cfg).unwrap();
        for (m, x) in values(&merged).iter().zip(values(&e)) {
            assert!((m - x).abs() <= f32::EPSILON * x.abs().max(1.0));
        }
    }

    #[test]
    fn zero_lambda_reproduces_base() {
        let base = ckpt(&[0.5, -0.5]);
        let e = ckpt(&[10.0, -10.0]);
        let cfg = TiesConfig {
            density: 1.0,
            lambda: 0.0,
        };
        let merged = ties_merge(&base, &[&e], &cfg).unwrap();
        assert_eq!(values(&merged), vec![0.5, -0.5]);
    }

    #[test]
    fn base_as_sole_expert_is_identity() {
        let base = ckpt(&[0.25, -1.5, 3.0e-5]);
        let merged = ties_merge(&base, &[&base.clone()], &TiesConfig::default()).unwrap();
        for (m, b) in values(&merged).iter().zip(values(&base)) {
            assert_eq!(m.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn kept_count_resists_float_ceiling_noise() {
        assert_eq!(kept_count(0.2, 10), 2);
        assert_eq!(kept_count(0.5, 4), 2);
        assert_eq!(kept_count(1.0, 7), 7);
        assert_eq!(kept_count(0.3, 10), 3);
        assert_eq!(kept_count(0.21, 10), 3); // genuinely fractional rounds up
        assert_eq!(kept_count(0.01, 10), 1); // at least one entry survives
    }

    #[test]
    fn magnitude_ties_keep_lower_flat_index() {
        let mut delta = [0.5f32, -0.5, 0.5, 0.1];
        trim_in_place(&mut delta, 2);
        assert_eq!(delta, [0.5, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for density in [0.0, -0.1, 1.5] {
            let cfg = TiesConfig {
                density,
                lambda: 1.0,
            };
            assert!(cfg.validate().is_err());
        }
        let cfg = TiesConfig {
            density: 0.5,
            lambda: -1.0,
        };
        assert!(cfg.validate().is_err());
    }
}
