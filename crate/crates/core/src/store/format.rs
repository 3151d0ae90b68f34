//! Container header encoding and validation.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::store::{DType, TensorInfo};

pub(crate) const METADATA_KEY: &str = "__metadata__";

/// One parsed header entry. `data_offsets` are byte positions relative to
/// the start of the data buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderEntry {
    pub info: TensorInfo,
    pub data_offsets: (u64, u64),
}

impl HeaderEntry {
    pub fn byte_len(&self) -> u64 {
        self.data_offsets.1 - self.data_offsets.0
    }
}

/// Parses and validates the UTF-8 JSON header against the size of the data
/// buffer that follows it. Checks dtype strings, offset ordering, bounds,
/// per-tensor length consistency and pairwise overlap.
pub fn parse_header(
    header: &[u8],
    data_len: u64,
) -> Result<(BTreeMap<String, HeaderEntry>, Option<BTreeMap<String, String>>)> {
    let root: Value = serde_json::from_slice(header)
        .map_err(|e| Error::InvalidHeader(format!("malformed JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::InvalidHeader("header is not a JSON object".into()))?;

    let mut index = BTreeMap::new();
    let mut metadata = None;

    for (name, value) in obj {
        if name == METADATA_KEY {
            let map = value
                .as_object()
                .ok_or_else(|| Error::InvalidHeader("__metadata__ is not an object".into()))?;
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let s = v.as_str().ok_or_else(|| {
                    Error::InvalidHeader(format!("__metadata__ value for {k:?} is not a string"))
                })?;
                out.insert(k.clone(), s.to_string());
            }
            metadata = Some(out);
            continue;
        }
        index.insert(name.clone(), parse_entry(name, value, data_len)?);
    }

    // Overlap check over (begin, end) ranges; empty tensors never overlap.
    let mut spans: Vec<(&str, u64, u64)> = index
        .iter()
        .map(|(n, e)| (n.as_str(), e.data_offsets.0, e.data_offsets.1))
        .collect();
    spans.sort_by_key(|&(_, begin, end)| (begin, end));
    for pair in spans.windows(2) {
        let (prev_name, _, prev_end) = pair[0];
        let (name, begin, end) = pair[1];
        if begin < prev_end && begin < end {
            return Err(Error::InvalidOffsets {
                name: name.to_string(),
                detail: format!("data range overlaps tensor {prev_name:?}"),
            });
        }
    }

    Ok((index, metadata))
}

fn parse_entry(name: &str, value: &Value, data_len: u64) -> Result<HeaderEntry> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidHeader(format!("entry {name:?} is not an object")))?;

    let dtype_str = obj
        .get("dtype")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidHeader(format!("entry {name:?} missing dtype string")))?;
    let dtype = DType::parse(dtype_str)?;

    let shape_arr = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidHeader(format!("entry {name:?} missing shape array")))?;
    let mut shape = Vec::with_capacity(shape_arr.len());
    for dim in shape_arr {
        let d = dim.as_u64().ok_or_else(|| {
            Error::InvalidHeader(format!("entry {name:?} has a non-integer dimension"))
        })?;
        shape.push(d as usize);
    }

    let offsets = obj
        .get("data_offsets")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidHeader(format!("entry {name:?} missing data_offsets")))?;
    if offsets.len() != 2 {
        return Err(Error::InvalidHeader(format!(
            "entry {name:?} data_offsets must have two elements"
        )));
    }
    let begin = offsets[0].as_u64().ok_or_else(|| {
        Error::InvalidHeader(format!("entry {name:?} has a non-integer offset"))
    })?;
    let end = offsets[1].as_u64().ok_or_else(|| {
        Error::InvalidHeader(format!("entry {name:?} has a non-integer offset"))
    })?;

    if end < begin {
        return Err(Error::InvalidOffsets {
            name: name.to_string(),
            detail: format!("end {end} precedes begin {begin}"),
        });
    }
    if end > data_len {
        return Err(Error::InvalidOffsets {
            name: name.to_string(),
            detail: format!("end {end} beyond data buffer of {data_len} bytes"),
        });
    }

    let info = TensorInfo::new(dtype, shape);
    let expected = info.byte_len() as u64;
    if end - begin != expected {
        return Err(Error::LengthMismatch {
            name: name.to_string(),
            expected: expected as usize,
            actual: (end - begin) as usize,
        });
    }

    Ok(HeaderEntry {
        info,
        data_offsets: (begin, end),
    })
}

/// Renders the header JSON for a planned tensor layout. Output is
/// deterministic for a given plan: `serde_json`'s map keeps keys sorted, and
/// entries are emitted without padding or whitespace.
pub fn render_header(
    entries: &BTreeMap<String, HeaderEntry>,
    metadata: Option<&BTreeMap<String, String>>,
) -> String {
    let mut root = Map::new();
    if let Some(md) = metadata {
        let meta: Map<String, Value> = md
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        root.insert(METADATA_KEY.to_string(), Value::Object(meta));
    }
    for (name, entry) in entries {
        root.insert(
            name.clone(),
            json!({
                "dtype": entry.info.dtype.as_str(),
                "shape": entry.info.shape,
                "data_offsets": [entry.data_offsets.0, entry.data_offsets.1],
            }),
        );
    }
    Value::Object(root).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(dtype: DType, shape: Vec<usize>, begin: u64, end: u64) -> String {
        format!(
            r#"{{"dtype":"{}","shape":{:?},"data_offsets":[{begin},{end}]}}"#,
            dtype.as_str(),
            shape
        )
    }

    #[test]
    fn parses_minimal_header() {
        let h = format!(r#"{{"a":{}}}"#, entry(DType::F32, vec![2, 2], 0, 16));
        let (index, meta) = parse_header(h.as_bytes(), 16).unwrap();
        assert!(meta.is_none());
        assert_eq!(index["a"].info.shape, vec![2, 2]);
        assert_eq!(index["a"].data_offsets, (0, 16));
    }

    #[test]
    fn rejects_unknown_dtype() {
        let h = r#"{"a":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}}"#;
        match parse_header(h.as_bytes(), 1) {
            Err(Error::UnknownDType(s)) => assert_eq!(s, "I8"),
            other => panic!("expected UnknownDType, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_bounds_offsets() {
        let h = format!(r#"{{"a":{}}}"#, entry(DType::F32, vec![4], 0, 16));
        assert!(matches!(
            parse_header(h.as_bytes(), 8),
            Err(Error::InvalidOffsets { .. })
        ));
    }

    #[test]
    fn rejects_overlapping_tensors() {
        let h = format!(
            r#"{{"a":{},"b":{}}}"#,
            entry(DType::F32, vec![4], 0, 16),
            entry(DType::F32, vec![4], 8, 24)
        );
        assert!(matches!(
            parse_header(h.as_bytes(), 24),
            Err(Error::InvalidOffsets { .. })
        ));
    }

    #[test]
    fn rejects_length_inconsistent_with_shape() {
        let h = format!(r#"{{"a":{}}}"#, entry(DType::F16, vec![3], 0, 8));
        assert!(matches!(
            parse_header(h.as_bytes(), 8),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(matches!(
            parse_header(b"{not json", 0),
            Err(Error::InvalidHeader(_))
        ));
    }

    #[test]
    fn metadata_roundtrips_through_render() {
        let mut entries = BTreeMap::new();
        entries.insert(
            "w".to_string(),
            HeaderEntry {
                info: TensorInfo::new(DType::BF16, vec![2]),
                data_offsets: (0, 4),
            },
        );
        let mut md = BTreeMap::new();
        md.insert("origin".to_string(), "test".to_string());
        let rendered = render_header(&entries, Some(&md));
        let (index, meta) = parse_header(rendered.as_bytes(), 4).unwrap();
        assert_eq!(index, entries);
        assert_eq!(meta.unwrap()["origin"], "test");
    }

    #[test]
    fn empty_tensor_map_parses() {
        let (index, meta) = parse_header(b"{}", 0).unwrap();
        assert!(index.is_empty());
        assert!(meta.is_none());
    }
}
