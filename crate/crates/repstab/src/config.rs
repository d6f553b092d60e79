//! Flat key-value run configuration.
//!
//! Config files are TOML whose tables flatten into dotted keys
//! (`encoder.name`, `importance.k`, ...). Command-line flags override
//! file values; the effective map is echoed into the run manifest and
//! hashed for cache keying.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    FileNotFound(String),
    #[error("failed parsing config: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?} has invalid value {value:?}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
}

/// Documented keys and their defaults.
const SCHEMA: &[(&str, &str)] = &[
    ("encoder.name", "stub:42"),
    ("encoder.max_length", "160"),
    ("importance.method", "grad"),
    ("importance.k", "20"),
    // Empty means: fall back to run.seed.
    ("importance.seed", ""),
    ("ig.steps", "50"),
    ("ig.baseline", "mask"),
    ("gradsam.relu", "false"),
    ("detector.lr", "0.0005"),
    ("detector.weight_decay", "0.01"),
    ("detector.batch_size", "32"),
    ("detector.max_epochs", "40"),
    ("detector.patience", "5"),
    ("detector.val_fraction", "0.1"),
    ("run.seed", "0"),
    ("run.deterministic", "false"),
    ("ingest.failure_tolerance", "0.01"),
    ("trace.failure_tolerance", "0.05"),
    ("cache.dir", ""),
];

/// Keys that determine trace-cache validity. Changing any of them forces
/// a recompute; detector-only settings do not.
const TRACE_KEYS: &[&str] = &[
    "encoder.name",
    "encoder.max_length",
    "importance.method",
    "importance.k",
    "importance.seed",
    "ig.steps",
    "ig.baseline",
    "gradsam.relu",
    "run.seed",
];

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: SCHEMA
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    /// Loads a TOML file and flattens nested tables into dotted keys.
    /// Unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        if !path.exists() {
            return Err(ConfigError::FileNotFound(path.display().to_string()));
        }
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let table: toml::Table = raw.parse().map_err(|e: toml::de::Error| {
            ConfigError::Parse(e.to_string())
        })?;
        let mut config = Config::default();
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        for (key, value) in flat {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    /// Overrides one key, validating it against the schema.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !self.values.contains_key(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key {key:?}"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse(key)
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse(key)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.parse(key)
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, ConfigError> {
        self.parse(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let value = self.get_str(key);
        value.parse().map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            message: e.to_string(),
        })
    }

    /// Seed for the random-importance heuristic: `importance.seed` when
    /// set, otherwise `run.seed`.
    pub fn importance_seed(&self) -> Result<u64, ConfigError> {
        let raw = self.get_str("importance.seed");
        if raw.is_empty() {
            self.get_u64("run.seed")
        } else {
            self.get_u64("importance.seed")
        }
    }

    /// The full effective map, for manifests.
    pub fn effective(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Hash over every key (detector settings included).
    pub fn full_hash(&self) -> String {
        hash_subset(self.values.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Hash over the keys that affect traces; the cache is keyed by this.
    pub fn trace_hash(&self) -> String {
        let seed = self
            .importance_seed()
            .map(|s| s.to_string())
            .unwrap_or_default();
        hash_subset(TRACE_KEYS.iter().map(|&k| {
            if k == "importance.seed" {
                (k, seed.as_str())
            } else {
                (k, self.get_str(k))
            }
        }))
    }
}

fn hash_subset<'a>(pairs: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in pairs {
        hasher.update(k.as_bytes());
        hasher.update([0x1f]);
        hasher.update(v.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(&hasher.finalize()[..16])
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, String>) {
    for (key, value) in table {
        let full = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            toml::Value::Table(inner) => flatten(&full, inner, out),
            toml::Value::String(s) => {
                out.insert(full, s.clone());
            }
            other => {
                out.insert(full, other.to_string());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_cover_the_schema_and_parse() {
        let config = Config::default();
        assert_eq!(config.get_str("importance.method"), "grad");
        assert_eq!(config.get_usize("importance.k").unwrap(), 20);
        assert_eq!(config.get_f64("detector.lr").unwrap(), 5e-4);
        assert!(!config.get_bool("gradsam.relu").unwrap());
        assert_eq!(config.importance_seed().unwrap(), 0);
    }

    #[test]
    fn toml_files_flatten_and_override() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "[encoder]\nname = \"stub:7\"\nmax_length = 64\n[importance]\nk = 10"
        )
        .unwrap();
        let config = Config::from_file(f.path()).unwrap();
        assert_eq!(config.get_str("encoder.name"), "stub:7");
        assert_eq!(config.get_usize("encoder.max_length").unwrap(), 64);
        assert_eq!(config.get_usize("importance.k").unwrap(), 10);
        // Untouched keys keep defaults.
        assert_eq!(config.get_str("ig.baseline"), "mask");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[encoder]\nnome = \"typo\"").unwrap();
        assert!(matches!(
            Config::from_file(f.path()),
            Err(ConfigError::UnknownKey(_))
        ));
        let mut config = Config::default();
        assert!(config.set("no.such.key", "1").is_err());
    }

    #[test]
    fn trace_hash_tracks_trace_keys_only() {
        let mut config = Config::default();
        let base = config.trace_hash();
        config.set("detector.lr", "0.001").unwrap();
        assert_eq!(config.trace_hash(), base, "detector keys must not rekey traces");
        assert_ne!(config.full_hash(), Config::default().full_hash());
        config.set("importance.k", "10").unwrap();
        assert_ne!(config.trace_hash(), base, "k changes must rekey traces");
    }

    #[test]
    fn importance_seed_falls_back_to_run_seed() {
        let mut config = Config::default();
        config.set("run.seed", "9").unwrap();
        assert_eq!(config.importance_seed().unwrap(), 9);
        config.set("importance.seed", "4").unwrap();
        assert_eq!(config.importance_seed().unwrap(), 4);
    }
}
