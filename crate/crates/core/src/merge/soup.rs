//! Model soups: elementwise (weighted) averages of expert checkpoints.

use crate::chunks::byte_chunks;
use crate::delta::{delta_row_mavs, expert_weight};
use crate::error::{Error, Result};
use crate::merge::{plan_of, soup_values};
use crate::store::{require_compat, Checkpoint, MemorySink, TensorSink, TensorSource};
use crate::topology::NamingScheme;

/// Validates soup weights and normalizes them to sum 1 (uniform when
/// absent).
pub fn normalized_weights(count: usize, weights: Option<&[f32]>) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match weights {
        None => vec![1.0; count],
        Some(w) => {
            if w.len() != count {
                return Err(Error::InvalidConfig(format!(
                    "{} weights for {count} experts",
                    w.len()
                )));
            }
            for &x in w {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "weights must be finite and non-negative, got {x}"
                    )));
                }
            }
            w.iter().map(|&x| x as f64).collect()
        }
    };
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidConfig("weight sum must be positive".into()));
    }
    Ok(raw.into_iter().map(|x| x / sum).collect())
}

/// Streams a weighted soup of two or more compatible experts into `sink`.
pub fn soup_into(
    experts: &[&dyn TensorSource],
    weights: Option<&[f32]>,
    sink: &mut dyn TensorSink,
) -> Result<()> {
    if experts.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "soup needs at least two experts, got {}",
            experts.len()
        )));
    }
    for other in &experts[1..] {
        require_compat(experts[0], *other)?;
    }
    let weights = normalized_weights(experts.len(), weights)?;

    let mut raw = Vec::new();
    let mut decoded: Vec<Vec<f32>> = vec![Vec::new(); experts.len()];
    let mut merged = Vec::new();
    let mut encoded = Vec::new();

    for (name, dtype, shape) in plan_of(experts[0]) {
        let info = crate::store::TensorInfo::new(dtype, shape.clone());
        sink.begin_tensor(&name, dtype, &shape)?;
        for range in byte_chunks(&info) {
            let len = (range.end - range.start) as usize;
            for (expert, values) in experts.iter().zip(decoded.iter_mut()) {
                raw.resize(len, 0);
                expert.read_range(&name, range.start, &mut raw)?;
                values.clear();
                dtype.decode_f32_into(&raw, values);
            }
            soup_values(&decoded, &weights, &mut merged);
            encoded.clear();
            dtype.encode_f32_into(&merged, &mut encoded);
            sink.write_chunk(&encoded)?;
        }
        sink.end_tensor()?;
    }
    Ok(())
}

/// In-memory convenience wrapper around [`soup_into`].
pub fn soup(experts: &[&dyn TensorSource], weights: Option<&[f32]>) -> Result<Checkpoint> {
    let mut sink = MemorySink::new();
    soup_into(experts, weights, &mut sink)?;
    Ok(sink.into_checkpoint())
}

/// Per-expert inverse-aggregate-MAV weights against a shared base. Errors
/// when any expert is identical to the base (undefined weight).
pub fn mav_soup_weights(
    base: &dyn TensorSource,
    experts: &[&dyn TensorSource],
    scheme: &NamingScheme,
) -> Result<Vec<f32>> {
    experts
        .iter()
        .map(|expert| expert_weight(&delta_row_mavs(base, *expert, scheme)?))
        .collect()
}

/// Soup with weights derived from the magnitude of each expert's change
/// from the base model. Returns the raw (unnormalized) weights used.
pub fn mav_weighted_soup_into(
    base: &dyn TensorSource,
    experts: &[&dyn TensorSource],
    scheme: &NamingScheme,
    sink: &mut dyn TensorSink,
) -> Result<Vec<f32>> {
    let weights = mav_soup_weights(base, experts, scheme)?;
    soup_into(experts, Some(&weights), sink)?;
    Ok(weights)
}

pub fn mav_weighted_soup(
    base: &dyn TensorSource,
    experts: &[&dyn TensorSource],
    scheme: &NamingScheme,
) -> Result<(Checkpoint, Vec<f32>)> {
    let mut sink = MemorySink::new();
    let weights = mav_weighted_soup_into(base, experts, scheme, &mut sink)?;
    Ok((sink.into_checkpoint(), weights))
}
