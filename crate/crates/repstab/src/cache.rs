//! Line-delimited trace cache.
//!
//! One record per text, keyed by the trace config hash. Loading drops
//! lines whose hash does not match (reported, not fatal), which makes
//! interrupted runs resumable: valid lines are kept, the remainder is
//! recomputed and appended in corpus order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::num::{cast, Float};
use crate::sensitivity::FeatureTensor;

/// Cached trace for one text. Sensitivities are the full-length sparse
/// vector; importances are the full profile (the tensor re-zeroes them
/// outside the selection).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub method: String,
    pub k: usize,
    pub selected: Vec<usize>,
    pub sensitivities: Vec<f64>,
    pub importances: Vec<f64>,
    pub encoder: String,
    pub config_hash: String,
}

impl TraceRecord {
    pub fn n_words(&self) -> usize {
        self.sensitivities.len()
    }

    /// Rebuilds the `N×2` detector input from the cached vectors.
    pub fn tensor<F: Float>(&self) -> FeatureTensor<F> {
        let n = self.n_words();
        let mut z = ndarray::Array2::zeros((n, 2));
        for &w in &self.selected {
            z[[w, 0]] = cast(self.sensitivities[w]);
            z[[w, 1]] = cast(self.importances[w]);
        }
        FeatureTensor { z }
    }
}

/// Result of reading a cache file.
#[derive(Debug, Default)]
pub struct LoadedCache {
    /// Valid records in file order, keyed by text id.
    pub records: BTreeMap<String, TraceRecord>,
    /// Lines dropped for hash mismatch or parse failure.
    pub ignored: usize,
}

/// Reads every cache line matching `expected_hash`.
pub fn load(path: &Path, expected_hash: &str) -> std::io::Result<LoadedCache> {
    let mut loaded = LoadedCache::default();
    if !path.exists() {
        return Ok(loaded);
    }
    let raw = std::fs::read_to_string(path)?;
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceRecord>(line) {
            Ok(record) if record.config_hash == expected_hash => {
                loaded.records.insert(record.id.clone(), record);
            }
            _ => loaded.ignored += 1,
        }
    }
    Ok(loaded)
}

/// Writes `records` as the complete cache file (used on resume to drop
/// stale or truncated lines before appending fresh work).
pub fn write_all(path: &Path, records: &[&TraceRecord]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, hash: &str) -> TraceRecord {
        TraceRecord {
            id: id.into(),
            method: "grad".into(),
            k: 2,
            selected: vec![0, 2],
            sensitivities: vec![0.01, 0.0, 0.03],
            importances: vec![0.5, 0.0, 0.9],
            encoder: "stub:1".into(),
            config_hash: hash.into(),
        }
    }

    #[test]
    fn load_filters_on_hash_and_reports_ignored_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let a = record("a", "h1");
        let b = record("b", "h2");
        write_all(&path, &[&a, &b]).unwrap();
        // A truncated trailing line must be tolerated.
        let mut raw = std::fs::read_to_string(&path).unwrap();
        raw.push_str("{\"id\":\"c\",\"met");
        std::fs::write(&path, raw).unwrap();

        let loaded = load(&path, "h1").unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert!(loaded.records.contains_key("a"));
        assert_eq!(loaded.ignored, 2);
    }

    #[test]
    fn tensor_reconstruction_zeroes_unselected_rows() {
        let r = record("a", "h");
        let t: FeatureTensor<f64> = r.tensor();
        assert_eq!(t.n_words(), 3);
        assert_eq!(t.sensitivity(0), 0.01);
        assert_eq!(t.importance(2), 0.9);
        assert_eq!(t.sensitivity(1), 0.0);
        assert_eq!(t.importance(1), 0.0);
    }

    #[test]
    fn missing_file_is_an_empty_cache() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load(&dir.path().join("none.jsonl"), "h").unwrap();
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.ignored, 0);
    }
}
