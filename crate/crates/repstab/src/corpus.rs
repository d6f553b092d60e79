//! Corpus ingestion and benign/adversarial pair alignment.
//!
//! Corpora are line-delimited JSON records. Ingestion is tolerant of
//! isolated bad lines (collected into an error report) and aborts only
//! when more than a configurable fraction of lines fail.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Label;

/// One corpus entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub label: Label,
    /// Links benign/adversarial counterparts; both members carry the same
    /// value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    /// Ground-truth perturbed word indices (adversarial records).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_indices: Option<Vec<usize>>,
}

/// A rejected input line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Successful ingestion output: validated records plus per-line errors.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub records: Vec<CorpusRecord>,
    pub line_errors: Vec<LineError>,
    pub total_lines: usize,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus file not found: {0}")]
    FileNotFound(String),
    #[error("failed reading corpus: {0}")]
    Io(String),
    #[error("corpus is empty")]
    Empty,
    #[error("{failed} of {total} lines failed (tolerance {tolerance}); first error at line {first_line}: {first_message}")]
    TooManyBadLines {
        failed: usize,
        total: usize,
        tolerance: f64,
        first_line: usize,
        first_message: String,
    },
}

/// Reads a line-delimited corpus. Lines that fail to parse or violate
/// record invariants are collected; the run aborts only when more than
/// `tolerance` (a fraction) of lines fail.
pub fn ingest(path: &Path, tolerance: f64) -> Result<IngestReport, IngestError> {
    if !path.exists() {
        return Err(IngestError::FileNotFound(path.display().to_string()));
    }
    let raw = std::fs::read_to_string(path).map_err(|e| IngestError::Io(e.to_string()))?;

    let mut records = Vec::new();
    let mut line_errors = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_lines = 0usize;

    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        match serde_json::from_str::<CorpusRecord>(line) {
            Ok(record) => {
                if let Some(&first) = seen_ids.get(&record.id) {
                    line_errors.push(LineError {
                        line: line_no,
                        message: format!(
                            "duplicate id {:?} (first seen on line {first})",
                            record.id
                        ),
                    });
                    continue;
                }
                seen_ids.insert(record.id.clone(), line_no);
                records.push(record);
            }
            Err(e) => {
                line_errors.push(LineError {
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }

    // Pairing invariant: an adversarial record carrying pair metadata must
    // reference a pair id some benign record also carries.
    let benign_pairs: std::collections::BTreeSet<String> = records
        .iter()
        .filter(|r| r.label == Label::Benign)
        .filter_map(|r| r.pair_id.clone())
        .collect();
    let mut paired_errors = Vec::new();
    records.retain(|r| {
        if r.label == Label::Adversarial {
            if let Some(pair) = r.pair_id.as_deref() {
                if !benign_pairs.contains(pair) {
                    paired_errors.push(LineError {
                        line: seen_ids[&r.id],
                        message: format!(
                            "adversarial record {:?} references unknown pair id {pair:?}",
                            r.id
                        ),
                    });
                    return false;
                }
            }
        }
        true
    });
    line_errors.extend(paired_errors);
    line_errors.sort_by_key(|e| e.line);

    if total_lines == 0 {
        return Err(IngestError::Empty);
    }
    let failed = line_errors.len();
    if failed as f64 > tolerance * total_lines as f64 {
        let first = &line_errors[0];
        return Err(IngestError::TooManyBadLines {
            failed,
            total: total_lines,
            tolerance,
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    Ok(IngestReport {
        records,
        line_errors,
        total_lines,
    })
}

/// Writes records as line-delimited JSON.
pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Positional word diff between a benign text and its adversarial
/// counterpart. Returns `None` when the whitespace word counts differ
/// (insert/delete edits), which excludes the pair from ranking metrics.
pub fn aligned_perturbed_indices(benign: &str, adversarial: &str) -> Option<Vec<usize>> {
    let b: Vec<&str> = benign.split_whitespace().collect();
    let a: Vec<&str> = adversarial.split_whitespace().collect();
    if b.len() != a.len() {
        return None;
    }
    Some(
        b.iter()
            .zip(a.iter())
            .enumerate()
            .filter_map(|(i, (x, y))| (x != y).then_some(i))
            .collect(),
    )
}

/// Ground-truth perturbed indices for every adversarial record, from
/// explicit metadata when present, otherwise by aligning against the
/// paired benign text.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// Adversarial record id -> perturbed word indices.
    pub by_id: BTreeMap<String, Vec<usize>>,
    /// Records excluded because the pair's word counts differ.
    pub unaligned: Vec<String>,
    /// Adversarial records with no metadata and no locatable pair.
    pub missing: Vec<String>,
}

pub fn perturbed_ground_truth(records: &[CorpusRecord]) -> GroundTruth {
    let benign_by_pair: BTreeMap<&str, &CorpusRecord> = records
        .iter()
        .filter(|r| r.label == Label::Benign)
        .filter_map(|r| r.pair_id.as_deref().map(|p| (p, r)))
        .collect();
    let mut truth = GroundTruth::default();
    for record in records.iter().filter(|r| r.label == Label::Adversarial) {
        if let Some(indices) = &record.perturbed_indices {
            truth.by_id.insert(record.id.clone(), indices.clone());
            continue;
        }
        let Some(pair) = record.pair_id.as_deref() else {
            truth.missing.push(record.id.clone());
            continue;
        };
        let Some(benign) = benign_by_pair.get(pair) else {
            truth.missing.push(record.id.clone());
            continue;
        };
        match aligned_perturbed_indices(&benign.text, &record.text) {
            Some(indices) => {
                truth.by_id.insert(record.id.clone(), indices);
            }
            None => truth.unaligned.push(record.id.clone()),
        }
    }
    truth
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn well_formed_corpus_loads_every_record() {
        let lines: Vec<String> = (0..10)
            .map(|i| {
                format!(
                    r#"{{"id":"r{i}","text":"some text {i}","label":"benign"}}"#
                )
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let f = write_lines(&refs);
        let report = ingest(f.path(), 0.01).unwrap();
        assert_eq!(report.records.len(), 10);
        assert!(report.line_errors.is_empty());
    }

    #[test]
    fn missing_fields_are_line_errors_with_numbers() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x","label":"benign"}"#,
            r#"{"id":"b","text":"y"}"#,
            r#"{"id":"c","text":"z","label":"adversarial"}"#,
        ]);
        let report = ingest(f.path(), 0.5).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.line_errors.len(), 1);
        assert_eq!(report.line_errors[0].line, 2);
        assert!(report.line_errors[0].message.contains("label"));
    }

    #[test]
    fn duplicate_ids_name_both_lines() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x","label":"benign"}"#,
            r#"{"id":"a","text":"y","label":"benign"}"#,
        ]);
        let report = ingest(f.path(), 0.9).unwrap();
        assert_eq!(report.records.len(), 1);
        let msg = &report.line_errors[0].message;
        assert!(msg.contains("duplicate"));
        assert!(msg.contains("line 1"));
        assert_eq!(report.line_errors[0].line, 2);
    }

    #[test]
    fn too_many_failures_abort() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x","label":"benign"}"#,
            r#"not json"#,
            r#"also not json"#,
        ]);
        assert!(matches!(
            ingest(f.path(), 0.01),
            Err(IngestError::TooManyBadLines { failed: 2, .. })
        ));
        // A generous tolerance accepts the same file.
        assert!(ingest(f.path(), 0.9).is_ok());
    }

    #[test]
    fn adversarial_records_must_reference_existing_pairs() {
        let f = write_lines(&[
            r#"{"id":"b1","text":"x","label":"benign","pair_id":"p1"}"#,
            r#"{"id":"a1","text":"y","label":"adversarial","pair_id":"p1"}"#,
            r#"{"id":"a2","text":"z","label":"adversarial","pair_id":"p9"}"#,
        ]);
        let report = ingest(f.path(), 0.5).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(report.line_errors[0].message.contains("p9"));
    }

    #[test]
    fn alignment_marks_substitutions_and_rejects_length_changes() {
        assert_eq!(
            aligned_perturbed_indices("the film was awful", "the film was terrible"),
            Some(vec![3])
        );
        assert_eq!(
            aligned_perturbed_indices("same words here", "same words here"),
            Some(vec![])
        );
        assert_eq!(
            aligned_perturbed_indices("one two three", "one two"),
            None
        );
    }

    #[test]
    fn ground_truth_prefers_metadata_then_alignment() {
        let records = vec![
            CorpusRecord {
                id: "b1".into(),
                text: "the film was awful".into(),
                label: Label::Benign,
                pair_id: Some("p1".into()),
                perturbed_indices: None,
            },
            CorpusRecord {
                id: "a1".into(),
                text: "the film was terrible".into(),
                label: Label::Adversarial,
                pair_id: Some("p1".into()),
                perturbed_indices: None,
            },
            CorpusRecord {
                id: "a2".into(),
                text: "with explicit markers".into(),
                label: Label::Adversarial,
                pair_id: None,
                perturbed_indices: Some(vec![0, 2]),
            },
            CorpusRecord {
                id: "b3".into(),
                text: "short one".into(),
                label: Label::Benign,
                pair_id: Some("p3".into()),
                perturbed_indices: None,
            },
            CorpusRecord {
                id: "a3".into(),
                text: "now much longer text".into(),
                label: Label::Adversarial,
                pair_id: Some("p3".into()),
                perturbed_indices: None,
            },
        ];
        let truth = perturbed_ground_truth(&records);
        assert_eq!(truth.by_id["a1"], vec![3]);
        assert_eq!(truth.by_id["a2"], vec![0, 2]);
        assert_eq!(truth.unaligned, vec!["a3".to_string()]);
    }
}
