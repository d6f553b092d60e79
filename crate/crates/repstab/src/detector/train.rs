//! Detector training: AdamW, stratified validation split, early stopping
//! on validation F1, best-checkpoint restore.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::num::{cast, Float};
use crate::opt::{AdamW, AdamWConfig};
use crate::sensitivity::FeatureTensor;
use crate::Label;

use super::augment::{augment, AugmentedInput, NormalizationStats};
use super::model::{DetectorConfig, DetectorModel};
use super::DetectorError;

/// Training recipe. Defaults follow the reference setup: AdamW at 5e-4,
/// batch size 32, at most 40 epochs, 10% validation, patience 5.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 5e-4,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 40,
            patience: 5,
            val_fraction: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters the returned model carries.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

const MIN_DATASET: usize = 20;

/// Trains a detector on labeled feature tensors.
///
/// Normalization statistics are fitted on the training split only; the
/// model returned is the best-validation-F1 checkpoint.
pub fn train<F: Float>(
    dataset: &[(FeatureTensor<F>, Label)],
    detector_cfg: DetectorConfig,
    cfg: TrainingConfig,
) -> Result<(DetectorModel<F>, NormalizationStats, TrainingLog), DetectorError> {
    if dataset.len() < MIN_DATASET {
        return Err(DetectorError::DatasetTooSmall {
            actual: dataset.len(),
            minimum: MIN_DATASET,
        });
    }
    let has_benign = dataset.iter().any(|(_, l)| *l == Label::Benign);
    let has_adv = dataset.iter().any(|(_, l)| *l == Label::Adversarial);
    if !has_benign || !has_adv {
        return Err(DetectorError::SingleClassDataset);
    }
    assert!(cfg.patience < cfg.max_epochs, "patience must be below max epochs");

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Stratified split keeps both classes in the validation set.
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for class in [Label::Benign, Label::Adversarial] {
        let mut members: Vec<usize> = dataset
            .iter()
            .enumerate()
            .filter_map(|(i, (_, l))| (*l == class).then_some(i))
            .collect();
        members.shuffle(&mut rng);
        let n_val = ((members.len() as f64 * cfg.val_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        val_idx.extend_from_slice(&members[..n_val]);
        train_idx.extend_from_slice(&members[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let train_tensors: Vec<FeatureTensor<F>> = train_idx
        .iter()
        .map(|&i| dataset[i].0.clone())
        .collect();
    let stats = NormalizationStats::fit(&train_tensors);

    let prepare = |idx: &[usize]| -> Result<(Vec<AugmentedInput<F>>, Vec<usize>), DetectorError> {
        let mut inputs = Vec::with_capacity(idx.len());
        let mut targets = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.push(augment(&dataset[i].0, &stats)?);
            targets.push(dataset[i].1.class_index());
        }
        Ok((inputs, targets))
    };
    let (train_inputs, train_targets) = prepare(&train_idx)?;
    let (val_inputs, val_targets) = prepare(&val_idx)?;

    let mut model = DetectorModel::new(detector_cfg, cfg.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.params(),
    );

    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_f1: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best_params = model.params().clone();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<AugmentedInput<F>> =
                chunk.iter().map(|&i| train_inputs[i].clone()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train_targets[i]).collect();
            let (loss, grads) = model.loss_and_grads(&batch, &targets, Some(&mut rng))?;
            loss_sum += loss.to_f64().unwrap() * chunk.len() as f64;
            seen += chunk.len();
            opt.step(model.params_mut(), &grads);
        }

        let (val_f1, val_acc) = evaluate(&model, &val_inputs, &val_targets)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_f1,
            val_accuracy: val_acc,
        });

        if val_f1 > log.best_val_f1 {
            log.best_val_f1 = val_f1;
            log.best_epoch = epoch;
            best_params = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    *model.params_mut() = best_params;
    Ok((model, stats, log))
}

/// F1 (adversarial positive) and accuracy on a prepared eval set.
fn evaluate<F: Float>(
    model: &DetectorModel<F>,
    inputs: &[AugmentedInput<F>],
    targets: &[usize],
) -> Result<(f64, f64), DetectorError> {
    let logits = model.forward(inputs)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut correct = 0usize;
    for (row, &target) in logits.rows().into_iter().zip(targets.iter()) {
        let pred = if row[1] > row[0] { 1 } else { 0 };
        if pred == target {
            correct += 1;
        }
        match (pred, target) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((f1, correct as f64 / targets.len() as f64))
}

/// Scores one tensor: softmax probability of the adversarial class and
/// the argmax label, ties resolved to benign.
pub fn predict<F: Float>(
    model: &DetectorModel<F>,
    stats: &NormalizationStats,
    tensor: &FeatureTensor<F>,
) -> Result<(Label, F), DetectorError> {
    let scores = predict_batch(model, stats, std::slice::from_ref(tensor))?;
    Ok(scores[0])
}

/// Batched [`predict`].
pub fn predict_batch<F: Float>(
    model: &DetectorModel<F>,
    stats: &NormalizationStats,
    tensors: &[FeatureTensor<F>],
) -> Result<Vec<(Label, F)>, DetectorError> {
    let inputs: Vec<AugmentedInput<F>> = tensors
        .iter()
        .map(|t| augment(t, stats))
        .collect::<Result<_, _>>()?;
    let logits = model.forward(&inputs)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let max = row[0].max(row[1]);
            let e0 = (row[0] - max).exp();
            let e1 = (row[1] - max).exp();
            let score = e1 / (e0 + e1);
            let label = if row[1] > row[0] {
                Label::Adversarial
            } else {
                Label::Benign
            };
            (label, score)
        })
        .collect())
}

/// Builds a labeled synthetic trace dataset that is linearly separable:
/// every trace carries low-level noise sensitivities on its selected
/// rows, and adversarial traces add one spike drawn from a clearly
/// shifted distribution.
pub fn separable_trace_dataset<F: Float>(
    n_per_class: usize,
    words: std::ops::Range<usize>,
    seed: u64,
) -> Vec<(FeatureTensor<F>, Label)> {
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut dataset = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = if i % 2 == 0 {
            Label::Benign
        } else {
            Label::Adversarial
        };
        let n = rng.gen_range(words.clone());
        let k = (n / 2).max(2).min(n);
        let mut selected: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        selected.sort_unstable();
        let mut z = ndarray::Array2::zeros((n, 2));
        for &w in &selected {
            let s = 0.010 + 0.004 * rng.gen::<f64>();
            let a = 0.2 + 0.6 * rng.gen::<f64>();
            z[[w, 0]] = cast(s);
            z[[w, 1]] = cast(a);
        }
        if label == Label::Adversarial {
            let spike = selected[rng.gen_range(0..selected.len())];
            z[[spike, 0]] = cast(0.030 + 0.006 * rng.gen::<f64>());
        }
        dataset.push((FeatureTensor { z }, label));
    }
    dataset
}
