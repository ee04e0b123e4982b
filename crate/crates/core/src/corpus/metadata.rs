use std::collections::HashMap;
use std::path::Path;

use super::CorpusError;

/// Sidecar metadata for one document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocMetadata {
    pub genre: Option<String>,
    pub duration_ms: Option<u64>,
}

/// Parses `doc_id<TAB>genre<TAB>duration_ms` lines. Empty fields mean
/// unknown; a first line starting with `doc_id` is treated as a header.
pub fn parse_metadata(text: &str) -> Result<HashMap<String, DocMetadata>, CorpusError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("doc_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |message: String| CorpusError::Metadata { line: i + 1, message };
        if fields.len() < 2 {
            return Err(err(format!("expected at least 2 tab-separated fields, got {}", fields.len())));
        }
        let genre = Some(fields[1].trim()).filter(|g| !g.is_empty()).map(str::to_string);
        let duration_ms = match fields.get(2).map(|d| d.trim()).filter(|d| !d.is_empty()) {
            Some(d) => Some(d.parse().map_err(|_| err(format!("bad duration_ms {d:?}")))?),
            None => None,
        };
        out.insert(fields[0].trim().to_string(), DocMetadata { genre, duration_ms });
    }
    Ok(out)
}

pub fn load_metadata(path: &Path) -> Result<HashMap<String, DocMetadata>, CorpusError> {
    parse_metadata(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_empty_fields() {
        let m = parse_metadata("doc_id\tgenre\tduration_ms\na\tDrama\t6000\nb\t\t\n").unwrap();
        assert_eq!(m["a"], DocMetadata { genre: Some("Drama".into()), duration_ms: Some(6000) });
        assert_eq!(m["b"], DocMetadata::default());
    }

    #[test]
    fn rejects_bad_duration() {
        assert!(matches!(parse_metadata("a\tDrama\tsoon"), Err(CorpusError::Metadata { line: 1, .. })));
    }
}
