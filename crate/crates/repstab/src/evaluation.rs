//! Perturbation-identification and detection metrics.
//!
//! NDCG@k and binned recall grade how well an importance heuristic ranks
//! the truly perturbed words; confusion-matrix metrics and rank-statistic
//! AUC grade the detector; Spearman correlation with Benjamini-Hochberg
//! correction relates the two across experimental configurations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::importance::ImportanceProfile;
use crate::num::Float;
use crate::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record has no perturbed words")]
    NoRelevantItems,
    #[error("bin edges must be strictly increasing and non-empty")]
    InvalidBins,
    #[error("ranks are degenerate (a variable is constant)")]
    DegenerateRanks,
    #[error("family has {actual} pairs; at least {minimum} required")]
    FamilyTooSmall { actual: usize, minimum: usize },
    #[error("input lengths differ")]
    LengthMismatch,
}

/// One text's ranking of words against the ground-truth perturbed set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingRecord {
    pub text_id: String,
    /// Word indices by descending importance (ties broken by lower index).
    pub ranked_words: Vec<usize>,
    /// Ground-truth perturbed word indices.
    pub perturbed: BTreeSet<usize>,
}

/// Full descending ranking of a profile's words, ties broken by lower
/// word index.
pub fn rank_words<F: Float>(profile: &ImportanceProfile<F>) -> Vec<usize> {
    let scores: Vec<f64> = profile.scores.iter().map(|v| v.to_f64().unwrap()).collect();
    rank_scores(&scores)
}

/// [`rank_words`] over a raw score slice.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// NDCG@k with binary relevance: DCG sums `1/log2(rank+1)` over ranked
/// perturbed words, normalized by the ideal ordering's DCG.
pub fn ndcg_at_k(record: &RankingRecord, k: usize) -> Result<f64, EvalError> {
    assert!(k >= 1, "k must be at least 1");
    if record.perturbed.is_empty() {
        return Err(EvalError::NoRelevantItems);
    }
    let depth = k.min(record.ranked_words.len());
    let mut dcg = 0.0;
    for (i, word) in record.ranked_words[..depth].iter().enumerate() {
        if record.perturbed.contains(word) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let ideal = record.perturbed.len().min(k);
    let mut idcg = 0.0;
    for i in 0..ideal {
        idcg += 1.0 / ((i + 2) as f64).log2();
    }
    Ok(dcg / idcg)
}

/// Fraction of the perturbed set captured in the top-k ranking.
pub fn recall_at_k(record: &RankingRecord, k: usize) -> Result<f64, EvalError> {
    if record.perturbed.is_empty() {
        return Err(EvalError::NoRelevantItems);
    }
    let depth = k.min(record.ranked_words.len());
    let hits = record.ranked_words[..depth]
        .iter()
        .filter(|w| record.perturbed.contains(w))
        .count();
    Ok(hits as f64 / record.perturbed.len() as f64)
}

/// One perturbation-count bin's aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecallBin {
    pub lo: usize,
    /// Exclusive upper edge; `None` for the unbounded last bin.
    pub hi: Option<usize>,
    /// `None` when the bin is empty (flagged, not an error).
    pub mean_recall: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinnedRecall {
    pub bins: Vec<RecallBin>,
    /// Records whose perturbation count fell below the first edge.
    pub below_range: usize,
}

/// Sorts records into perturbation-count bins (edges are inclusive lower
/// bounds; the last bin is unbounded) and averages top-k recall per bin.
pub fn binned_recall(
    records: &[RankingRecord],
    k: usize,
    bin_edges: &[usize],
) -> Result<BinnedRecall, EvalError> {
    if bin_edges.is_empty() || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidBins);
    }
    let mut sums = vec![0.0f64; bin_edges.len()];
    let mut counts = vec![0usize; bin_edges.len()];
    let mut below_range = 0usize;
    for record in records {
        if record.perturbed.is_empty() {
            continue; // excluded upstream by contract; tolerated here
        }
        let p = record.perturbed.len();
        if p < bin_edges[0] {
            below_range += 1;
            continue;
        }
        let bin = match bin_edges.iter().rposition(|&e| p >= e) {
            Some(b) => b,
            None => continue,
        };
        sums[bin] += recall_at_k(record, k)?;
        counts[bin] += 1;
    }
    let bins = bin_edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| RecallBin {
            lo,
            hi: bin_edges.get(i + 1).copied(),
            mean_recall: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
            count: counts[i],
        })
        .collect();
    Ok(BinnedRecall { bins, below_range })
}

/// Confusion-matrix metrics plus rank-statistic AUC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Standard detection metrics with adversarial as the positive class.
/// Score ties contribute 0.5 to the AUC (average ranks).
pub fn detection_metrics(
    labels: &[Label],
    predictions: &[Label],
    scores: &[f64],
) -> Result<DetectionMetrics, EvalError> {
    if labels.len() != predictions.len() || labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (&l, &p) in labels.iter().zip(predictions.iter()) {
        match (p, l) {
            (Label::Adversarial, Label::Adversarial) => tp += 1,
            (Label::Adversarial, Label::Benign) => fp += 1,
            (Label::Benign, Label::Benign) => tn += 1,
            (Label::Benign, Label::Adversarial) => fn_ += 1,
        }
    }
    let total = labels.len() as f64;
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

    let positives = labels.iter().filter(|&&l| l == Label::Adversarial).count();
    let negatives = labels.len() - positives;
    let auc = (positives > 0 && negatives > 0).then(|| {
        let ranks = average_ranks(scores);
        let rank_sum: f64 = ranks
            .iter()
            .zip(labels.iter())
            .filter(|(_, &l)| l == Label::Adversarial)
            .map(|(&r, _)| r)
            .sum();
        let p = positives as f64;
        let n = negatives as f64;
        (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
    });

    Ok(DetectionMetrics {
        accuracy: (tp + tn) as f64 / total,
        precision,
        recall,
        f1,
        auc,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
    })
}

/// 1-based ranks with ties replaced by their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of 1-based ranks i+1..=j+1
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation of one group of paired observations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman's rho via average ranks and Pearson on the ranks; two-sided
/// p-value from the t approximation with `n - 2` degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<SpearmanResult, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch);
    }
    let n = xs.len();
    if n < 3 {
        return Err(EvalError::FamilyTooSmall {
            actual: n,
            minimum: 3,
        });
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mean = (n + 1) as f64 / 2.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateRanks);
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);

    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(SpearmanResult {
        rho,
        p_value: p_value.clamp(0.0, 1.0),
        n,
    })
}

/// Benjamini-Hochberg step-up q-values with the monotonicity pass.
/// Output order matches input order.
pub fn bh_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap());
    let mut q_sorted = vec![0.0; m];
    let mut running_min = f64::INFINITY;
    for rank in (0..m).rev() {
        // Ratio first so the top rank's factor is exactly 1.0.
        let raw = p_values[order[rank]] * (m as f64 / (rank + 1) as f64);
        running_min = running_min.min(raw.min(1.0));
        q_sorted[rank] = running_min;
    }
    let mut q = vec![0.0; m];
    for (rank, &idx) in order.iter().enumerate() {
        q[idx] = q_sorted[rank];
    }
    q
}

/// One named group of (accuracy, NDCG) pairs inside a correction family.
#[derive(Debug, Clone)]
pub struct CorrelationGroup {
    pub key: String,
    pub pairs: Vec<(f64, f64)>,
}

/// Correlation report for one group; `rho`/`p`/`q` are `None` when the
/// group's ranks were degenerate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub key: String,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub q_value: Option<f64>,
    pub n: usize,
    pub degenerate: bool,
}

/// Spearman per group, then BH correction across the groups of this one
/// family. Degenerate groups are reported as such and excluded from the
/// correction.
pub fn spearman_bh(groups: &[CorrelationGroup]) -> Result<Vec<CorrelationReport>, EvalError> {
    let mut reports = Vec::with_capacity(groups.len());
    let mut valid_ps = Vec::new();
    let mut valid_slots = Vec::new();
    for (i, group) in groups.iter().enumerate() {
        let xs: Vec<f64> = group.pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = group.pairs.iter().map(|p| p.1).collect();
        match spearman(&xs, &ys) {
            Ok(result) => {
                valid_ps.push(result.p_value);
                valid_slots.push(i);
                reports.push(CorrelationReport {
                    key: group.key.clone(),
                    rho: Some(result.rho),
                    p_value: Some(result.p_value),
                    q_value: None,
                    n: result.n,
                    degenerate: false,
                });
            }
            Err(EvalError::DegenerateRanks) => {
                reports.push(CorrelationReport {
                    key: group.key.clone(),
                    rho: None,
                    p_value: None,
                    q_value: None,
                    n: group.pairs.len(),
                    degenerate: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let qs = bh_adjust(&valid_ps);
    for (slot, q) in valid_slots.into_iter().zip(qs) {
        reports[slot].q_value = Some(q);
    }
    Ok(reports)
}
