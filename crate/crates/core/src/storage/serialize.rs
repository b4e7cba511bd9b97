//! Canonical text encoding for the serialized map columns of `log_page`.
//!
//! Maps are written as a compact JSON object of string values with keys in
//! byte order, so equal maps always produce identical bytes: `{}`,
//! `{"page":"info"}`, `{"a":"1","b":"2"}`.

use crate::model::ParamMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("serialized map: {message} at byte offset {offset}")]
pub struct MapParseError {
    pub offset: usize,
    pub message: String,
}

pub fn serialize_map(map: &ParamMap) -> String {
    // BTreeMap iterates in key order; serde_json preserves it.
    serde_json::to_string(map).expect("string map serializes")
}

pub fn deserialize_map(text: &str) -> Result<ParamMap, MapParseError> {
    serde_json::from_str::<ParamMap>(text).map_err(|e| MapParseError {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string().split(" at line").next().unwrap_or_default().to_string(),
    })
}

/// serde_json reports 1-based line and column; turn that into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, &str)]) -> ParamMap {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_map() {
        assert_eq!(serialize_map(&ParamMap::new()), "{}");
        assert_eq!(deserialize_map("{}").unwrap(), ParamMap::new());
    }

    #[test]
    fn single_entry() {
        let m = map(&[("page", "info")]);
        let text = serialize_map(&m);
        assert_eq!(text, r#"{"page":"info"}"#);
        assert_eq!(deserialize_map(&text).unwrap(), m);
    }

    #[test]
    fn key_order_is_canonical() {
        let mut a = ParamMap::new();
        a.insert("a".into(), "1".into());
        a.insert("b".into(), "2".into());
        let mut b = ParamMap::new();
        b.insert("b".into(), "2".into());
        b.insert("a".into(), "1".into());
        assert_eq!(serialize_map(&a), serialize_map(&b));
        assert_eq!(serialize_map(&a), r#"{"a":"1","b":"2"}"#);
    }

    #[test]
    fn malformed_text_reports_offset() {
        let err = deserialize_map(r#"{"a":1}"#).unwrap_err();
        assert_eq!(err.offset, 5);
        let err = deserialize_map(r#"{"a":"1""#).unwrap_err();
        assert_eq!(err.offset, 7);
        assert!(deserialize_map("a:0:{}").is_err());
    }

    proptest! {
        #[test]
        fn round_trips(m in proptest::collection::btree_map(".{0,12}", ".{0,24}", 0..8)) {
            let text = serialize_map(&m);
            prop_assert!(!text.contains('\n'));
            prop_assert_eq!(deserialize_map(&text).unwrap(), m);
        }
    }
}
