//! Structural compatibility checks and per-tensor diffing.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::store::{DType, TensorSource};

/// One structural difference between two checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompatIssue {
    MissingInA(String),
    MissingInB(String),
    DTypeMismatch {
        name: String,
        a: DType,
        b: DType,
    },
    ShapeMismatch {
        name: String,
        a: Vec<usize>,
        b: Vec<usize>,
    },
}

impl fmt::Display for CompatIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompatIssue::MissingInA(n) => write!(f, "{n:?}: absent in first checkpoint"),
            CompatIssue::MissingInB(n) => write!(f, "{n:?}: absent in second checkpoint"),
            CompatIssue::DTypeMismatch { name, a, b } => {
                write!(f, "{name:?}: dtype {a} vs {b}")
            }
            CompatIssue::ShapeMismatch { name, a, b } => {
                write!(f, "{name:?}: shape {a:?} vs {b:?}")
            }
        }
    }
}

/// Full list of missing/extra names and mismatched entries. Empty means the
/// two checkpoints are structurally identical.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompatReport {
    pub issues: Vec<CompatIssue>,
}

impl CompatReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    /// Converts the report into `Err(Incompatible)` when non-empty.
    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Incompatible(self))
        }
    }
}

impl fmt::Display for CompatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

/// Checks that two checkpoints expose identical name sets with identical
/// dtype and shape per name. Mismatch is a report, not a failure.
pub fn validate_compat(a: &dyn TensorSource, b: &dyn TensorSource) -> CompatReport {
    let mut issues = Vec::new();
    let b_names: std::collections::BTreeSet<String> = b.names().into_iter().collect();

    for name in a.names() {
        let ia = a.info(&name).expect("name from index");
        match b.info(&name) {
            None => issues.push(CompatIssue::MissingInB(name)),
            Some(ib) => {
                if ia.dtype != ib.dtype {
                    issues.push(CompatIssue::DTypeMismatch {
                        name: name.clone(),
                        a: ia.dtype,
                        b: ib.dtype,
                    });
                }
                if ia.shape != ib.shape {
                    issues.push(CompatIssue::ShapeMismatch {
                        name,
                        a: ia.shape,
                        b: ib.shape,
                    });
                }
            }
        }
    }
    for name in b_names {
        if a.info(&name).is_none() {
            issues.push(CompatIssue::MissingInA(name));
        }
    }
    CompatReport { issues }
}

/// Requires compatibility for an operation; errors with the full report.
pub fn require_compat(a: &dyn TensorSource, b: &dyn TensorSource) -> Result<()> {
    validate_compat(a, b).into_result()
}

/// Per-tensor maximum absolute elementwise difference, computed in FLOAT32.
///
/// Bit-identical elements contribute 0 regardless of value (NaN included);
/// a NaN paired with a different bit pattern reports `inf` so that the
/// result is 0 iff payloads decode to identical values.
pub fn diff_max(a: &dyn TensorSource, b: &dyn TensorSource) -> Result<BTreeMap<String, f32>> {
    require_compat(a, b)?;
    let mut out = BTreeMap::new();
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    for name in a.names() {
        let info = a.info(&name).expect("name from index");
        let mut max = 0f32;
        for range in crate::chunks::byte_chunks(&info) {
            let len = (range.end - range.start) as usize;
            buf_a.resize(len, 0);
            buf_b.resize(len, 0);
            a.read_range(&name, range.start, &mut buf_a)?;
            b.read_range(&name, range.start, &mut buf_b)?;
            let va = info.dtype.decode_f32(&buf_a);
            let vb = info.dtype.decode_f32(&buf_b);
            for (x, y) in va.iter().zip(&vb) {
                if x.to_bits() == y.to_bits() {
                    continue;
                }
                let d = (x - y).abs();
                let d = if d.is_nan() { f32::INFINITY } else { d };
                if d > max {
                    max = d;
                }
            }
        }
        out.insert(name, max);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Checkpoint, TensorRecord};

    fn ckpt(entries: &[(&str, Vec<usize>, Vec<f32>)]) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, shape, values) in entries {
            ck.insert(TensorRecord::from_f32(*name, DType::F32, shape.clone(), values).unwrap());
        }
        ck
    }

    #[test]
    fn identical_checkpoints_are_compatible() {
        let a = ckpt(&[("x", vec![2], vec![1.0, 2.0])]);
        assert!(validate_compat(&a, &a.clone()).is_ok());
    }

    #[test]
    fn missing_tensor_is_reported() {
        let a = ckpt(&[("x", vec![1], vec![0.0]), ("y", vec![1], vec![0.0])]);
        let b = ckpt(&[("x", vec![1], vec![0.0])]);
        let report = validate_compat(&a, &b);
        assert_eq!(report.issues, vec![CompatIssue::MissingInB("y".into())]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = ckpt(&[("x", vec![4, 4], vec![0.0; 16])]);
        let b = ckpt(&[("x", vec![4, 8], vec![0.0; 32])]);
        let report = validate_compat(&a, &b);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(report.issues[0], CompatIssue::ShapeMismatch { .. }));
    }

    #[test]
    fn dtype_mismatch_is_a_hard_error_downstream() {
        let a = ckpt(&[("x", vec![1], vec![0.5])]);
        let mut b = Checkpoint::new();
        b.insert(TensorRecord::from_f32("x", DType::F16, vec![1], &[0.5]).unwrap());
        assert!(matches!(diff_max(&a, &b), Err(Error::Incompatible(_))));
    }

    #[test]
    fn diff_of_identical_is_zero() {
        let a = ckpt(&[("x", vec![3], vec![1.0, -2.0, 3.5])]);
        let d = diff_max(&a, &a.clone()).unwrap();
        assert_eq!(d["x"], 0.0);
    }

    #[test]
    fn diff_matches_simple_example() {
        let a = ckpt(&[("x", vec![2], vec![1.0, 2.0])]);
        let b = ckpt(&[("x", vec![2], vec![1.0, 5.0])]);
        assert_eq!(diff_max(&a, &b).unwrap()["x"], 3.0);
    }

    #[test]
    fn nan_against_number_reports_infinite_difference() {
        let a = ckpt(&[("x", vec![1], vec![f32::NAN])]);
        let b = ckpt(&[("x", vec![1], vec![1.0])]);
        assert_eq!(diff_max(&a, &b).unwrap()["x"], f32::INFINITY);
        // Same NaN bits on both sides count as identical.
        assert_eq!(diff_max(&a, &a.clone()).unwrap()["x"], 0.0);
    }
}
