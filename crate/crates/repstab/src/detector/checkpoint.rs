//! Detector checkpoint serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::num::Float;
use crate::params::{ParamRecord, ParamSet};

use super::augment::NormalizationStats;
use super::model::{DetectorConfig, DetectorModel};
use super::train::TrainingConfig;
use super::DetectorError;

const CHECKPOINT_FORMAT: &str = "repstab-detector-v1";

/// Run metadata carried alongside the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub training: TrainingConfig,
}

#[derive(Serialize, Deserialize)]
struct DetectorCheckpoint {
    format: String,
    architecture: DetectorConfig,
    stats: NormalizationStats,
    meta: CheckpointMeta,
    params: Vec<ParamRecord>,
}

pub fn save_checkpoint<F: Float>(
    path: &Path,
    model: &DetectorModel<F>,
    stats: &NormalizationStats,
    meta: &CheckpointMeta,
) -> Result<(), DetectorError> {
    let ckpt = DetectorCheckpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        architecture: model.config(),
        stats: *stats,
        meta: meta.clone(),
        params: model.params().to_records(),
    };
    let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    std::fs::write(path, json).map_err(|e| DetectorError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<F: Float>(
    path: &Path,
) -> Result<(DetectorModel<F>, NormalizationStats, CheckpointMeta), DetectorError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| DetectorError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: DetectorCheckpoint =
        serde_json::from_str(&raw).map_err(|e| DetectorError::Checkpoint(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(DetectorError::Checkpoint(format!(
            "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT:?})",
            ckpt.format
        )));
    }
    let mut model = DetectorModel::new(ckpt.architecture, ckpt.meta.seed)?;
    let loaded: ParamSet<F> = ParamSet::from_records(&ckpt.params)
        .ok_or_else(|| DetectorError::Checkpoint("malformed parameter records".into()))?;
    if loaded.len() != model.params().len() {
        return Err(DetectorError::Checkpoint(
            "parameter tensor count mismatch".into(),
        ));
    }
    for (i, (name, value)) in loaded.iter().enumerate() {
        let (expected_name, expected_shape) = {
            let (n, v) = model.params().iter().nth(i).unwrap();
            (n.to_string(), v.raw_dim())
        };
        if expected_name != name || expected_shape != value.raw_dim() {
            return Err(DetectorError::Checkpoint(format!(
                "unexpected parameter {name}"
            )));
        }
        model.params_mut().values_mut()[i] = value.clone();
    }
    Ok((model, ckpt.stats, ckpt.meta))
}
