//! Run manifests: every artifact a subcommand emits references the
//! producing configuration through these.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;

const MANIFEST_FORMAT: &str = "repstab-manifest-v1";

/// Where input-embedding gradients are taken in this implementation.
pub const GRADIENT_INJECTION: &str = "token-embeddings-after-lookup-before-positional";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    /// Hash of the full effective configuration.
    pub config_hash: String,
    /// Hash of the trace-relevant subset; cache lines carry this.
    pub trace_config_hash: String,
    pub encoder: String,
    pub method: String,
    pub k: usize,
    pub seed: u64,
    /// RFC3339 timestamp; omitted in canonical (deterministic) mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub gradient_injection: String,
    /// Artifact name -> path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub effective_config: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &Config, canonical: bool) -> Self {
        let created_at = if canonical {
            None
        } else {
            Some(now_rfc3339())
        };
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            config_hash: config.full_hash(),
            trace_config_hash: config.trace_hash(),
            encoder: config.get_str("encoder.name").to_string(),
            method: config.get_str("importance.method").to_string(),
            k: config.get_usize("importance.k").unwrap_or(0),
            seed: config.get_u64("run.seed").unwrap_or(0),
            created_at,
            gradient_injection: GRADIENT_INJECTION.to_string(),
            artifacts: BTreeMap::new(),
            effective_config: config.effective().clone(),
        }
    }

    pub fn add_artifact(&mut self, name: &str, relative_path: &str) {
        self.artifacts
            .insert(name.to_string(), relative_path.to_string());
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let manifest: RunManifest = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(format!(
                "unsupported manifest format {:?} (expected {MANIFEST_FORMAT:?})",
                manifest.format
            ));
        }
        Ok(manifest)
    }
}

fn now_rfc3339() -> String {
    // Seconds since the epoch rendered as UTC; avoids a clock dependency.
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let days = secs / 86_400;
    let (y, m, d) = civil_from_days(days as i64);
    let rem = secs % 86_400;
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

/// Days-since-epoch to (year, month, day), civil calendar.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_manifests_round_trip_without_timestamps() {
        let config = Config::default();
        let mut manifest = RunManifest::new(&config, true);
        manifest.add_artifact("trace_cache", "cache/corpus.traces.jsonl");
        assert!(manifest.created_at.is_none());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded.config_hash, manifest.config_hash);
        assert_eq!(loaded.artifacts["trace_cache"], "cache/corpus.traces.jsonl");

        // Canonical manifests serialize identically across runs.
        let again = RunManifest::new(&config, true);
        assert_eq!(
            serde_json::to_string(&again).unwrap(),
            serde_json::to_string(&RunManifest::new(&config, true)).unwrap()
        );
    }

    #[test]
    fn non_canonical_manifests_carry_a_timestamp() {
        let manifest = RunManifest::new(&Config::default(), false);
        let ts = manifest.created_at.unwrap();
        assert!(ts.ends_with('Z'));
        assert!(ts.starts_with("20"));
    }

    #[test]
    fn civil_conversion_handles_known_dates() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(19_723), (2024, 1, 1));
    }
}
