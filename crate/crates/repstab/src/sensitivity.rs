//! Embedding sensitivity under targeted masking.
//!
//! Given per-word importance scores, pick the top-K words, mask each one
//! individually, and measure the cosine distance between the reference
//! sentence embedding and each masked embedding. The sensitivities and
//! importances are then laid out as an `N×2` tensor in original word
//! order, zero outside the selected set, which is what the detector
//! consumes.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError, TokenizedText};
use crate::importance::ImportanceProfile;
use crate::num::{cast, Float};

/// Sensitivities for one text's selected words.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Float")]
pub struct SensitivityTrace<F: Float> {
    /// Selected word indices, ascending.
    pub selected: Vec<usize>,
    /// Length-N vector; zero outside `selected`.
    pub sensitivities: Array1<F>,
    /// The shared reference embedding every masking was compared against.
    pub reference_embedding: Array1<F>,
    /// Selected indices whose cosine was degenerate (near-zero norm) and
    /// were therefore scored 0.
    pub degenerate: Vec<usize>,
}

impl<F: Float> SensitivityTrace<F> {
    pub fn len(&self) -> usize {
        self.sensitivities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensitivities.is_empty()
    }

    /// Sensitivities of the selected words, in selection order.
    pub fn selected_values(&self) -> impl Iterator<Item = F> + '_ {
        self.selected.iter().map(|&i| self.sensitivities[i])
    }
}

/// The `N×2` detector input: column 0 sensitivity, column 1 importance,
/// both zero outside the selected set, rows in original word order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Float")]
pub struct FeatureTensor<F: Float> {
    pub z: Array2<F>,
}

impl<F: Float> FeatureTensor<F> {
    pub fn n_words(&self) -> usize {
        self.z.nrows()
    }

    pub fn sensitivity(&self, word: usize) -> F {
        self.z[[word, 0]]
    }

    pub fn importance(&self, word: usize) -> F {
        self.z[[word, 1]]
    }
}

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("profile covers {actual} words but the text has {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("masking word {word_index} failed: {source}")]
    Mask {
        word_index: usize,
        source: EncoderError,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("benign sensitivities have a near-zero mean; ratio undefined")]
    DegenerateDenominator,
    #[error("trace collection is empty")]
    EmptyCollection,
}

/// Indices of the `min(k, N)` largest scores, ties broken by lower word
/// index, returned ascending.
pub fn select_top_k<F: Float>(profile: &ImportanceProfile<F>, k: usize) -> Vec<usize> {
    let n = profile.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        profile.scores[b]
            .partial_cmp(&profile.scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(k.min(n)).collect();
    chosen.sort_unstable();
    chosen
}

/// A cosine distance together with its degeneracy flag.
#[derive(Debug, Clone, Copy)]
pub struct Sensitivity<F> {
    pub value: F,
    /// True when either vector had near-zero norm and the score was
    /// forced to 0.
    pub degenerate: bool,
}

/// Cosine distance between the reference and a masked embedding, clamped
/// to `[0, 2]`. Near-zero norms flag the result degenerate instead of
/// erroring so one pathological text cannot abort a corpus run.
pub fn sensitivity_score<F: Float>(reference: &Array1<F>, masked: &Array1<F>) -> Sensitivity<F> {
    assert_eq!(reference.len(), masked.len(), "dimension mismatch");
    let eps: F = cast(1e-12);
    let norm_r = reference.fold(F::zero(), |a, &v| a + v * v).sqrt();
    let norm_m = masked.fold(F::zero(), |a, &v| a + v * v).sqrt();
    if norm_r < eps || norm_m < eps {
        return Sensitivity {
            value: F::zero(),
            degenerate: true,
        };
    }
    let dot = reference
        .iter()
        .zip(masked.iter())
        .fold(F::zero(), |a, (&x, &y)| a + x * y);
    let value = (F::one() - dot / (norm_r * norm_m))
        .max(F::zero())
        .min(cast(2.0));
    Sensitivity {
        value,
        degenerate: false,
    }
}

/// Masks each selected word in turn and scores the embedding shift
/// against a reference computed exactly once. Maskings are independent
/// and may run in parallel; results stay in word order.
pub fn profile_text<F: Float>(
    encoder: &(impl Encoder<F> + ?Sized + Sync),
    text: &TokenizedText,
    profile: &ImportanceProfile<F>,
    k: usize,
) -> Result<SensitivityTrace<F>, SensitivityError> {
    let n = text.n_words();
    if profile.scores.len() != n {
        return Err(SensitivityError::ShapeMismatch {
            expected: n,
            actual: profile.scores.len(),
        });
    }
    let selected = select_top_k(profile, k);
    let reference = encoder.encode(text)?.sentence_embedding;

    let masked: Vec<(usize, Result<Array1<F>, EncoderError>)> = selected
        .par_iter()
        .map(|&w| (w, encoder.encode_masked(text, w)))
        .collect();

    let mut sensitivities = Array1::zeros(n);
    let mut degenerate = Vec::new();
    for (w, result) in masked {
        let embedding = result.map_err(|source| SensitivityError::Mask {
            word_index: w,
            source,
        })?;
        let s = sensitivity_score(&reference, &embedding);
        sensitivities[w] = s.value;
        if s.degenerate {
            degenerate.push(w);
        }
    }

    Ok(SensitivityTrace {
        selected,
        sensitivities,
        reference_embedding: reference,
        degenerate,
    })
}

/// Stacks sensitivity and importance column-wise, zeroing importance
/// outside the selected set.
pub fn build_feature_tensor<F: Float>(
    text: &TokenizedText,
    profile: &ImportanceProfile<F>,
    trace: &SensitivityTrace<F>,
) -> Result<FeatureTensor<F>, SensitivityError> {
    let n = text.n_words();
    if profile.scores.len() != n {
        return Err(SensitivityError::ShapeMismatch {
            expected: n,
            actual: profile.scores.len(),
        });
    }
    if trace.sensitivities.len() != n {
        return Err(SensitivityError::ShapeMismatch {
            expected: n,
            actual: trace.sensitivities.len(),
        });
    }
    let mut z = Array2::zeros((n, 2));
    for &w in &trace.selected {
        z[[w, 0]] = trace.sensitivities[w];
        z[[w, 1]] = profile.scores[w];
    }
    Ok(FeatureTensor { z })
}

/// Pooled mean of selected sensitivities across adversarial traces,
/// divided by the same mean across benign traces.
pub fn instability_ratio<F: Float>(
    benign: &[SensitivityTrace<F>],
    adversarial: &[SensitivityTrace<F>],
) -> Result<F, SensitivityError> {
    if benign.is_empty() || adversarial.is_empty() {
        return Err(SensitivityError::EmptyCollection);
    }
    let mean = |traces: &[SensitivityTrace<F>]| {
        let mut total = F::zero();
        let mut count = 0usize;
        for t in traces {
            for v in t.selected_values() {
                total += v;
                count += 1;
            }
        }
        if count == 0 {
            F::zero()
        } else {
            total / cast(count as f64)
        }
    };
    let benign_mean = mean(benign);
    let adv_mean = mean(adversarial);
    if benign_mean < cast(1e-12) {
        return Err(SensitivityError::DegenerateDenominator);
    }
    Ok(adv_mean / benign_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TransformerClassifier;
    use crate::importance::{random_importance, MethodSpec};
    use ndarray::array;
    use proptest::prelude::*;

    fn profile_from(scores: Vec<f64>) -> ImportanceProfile<f64> {
        ImportanceProfile {
            method: MethodSpec::Gradient,
            scores: Array1::from_vec(scores),
        }
    }

    #[test]
    fn top_k_breaks_ties_by_position_and_sorts_ascending() {
        let p = profile_from(vec![0.3, 0.1, 0.3, 0.2]);
        assert_eq!(select_top_k(&p, 2), vec![0, 2]);
        assert_eq!(select_top_k(&p, 3), vec![0, 2, 3]);
        assert_eq!(select_top_k(&p, 99), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cosine_distance_hand_cases() {
        let a: Array1<f64> = array![1.0, 0.0];
        assert!(sensitivity_score(&a, &a.clone()).value.abs() < 1e-12);
        let s = sensitivity_score(&a, &array![0.0, 1.0]);
        assert!((s.value - 1.0).abs() < 1e-12);
        let s = sensitivity_score(&a, &array![-1.0, 0.0]);
        assert!((s.value - 2.0).abs() < 1e-12);
        let s = sensitivity_score(&a, &array![0.0, 0.0]);
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn profiling_scores_a_noop_mask_below_tolerance() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(23, 64);
        let text = model.tokenize("fine [MASK] day today").unwrap();
        let profile = profile_from(vec![0.1, 0.9, 0.2, 0.3]);
        let trace = profile_text(&model, &text, &profile, text.n_words()).unwrap();
        assert!(trace.sensitivities[1] < 1e-6, "s = {}", trace.sensitivities[1]);
        assert_eq!(trace.selected, vec![0, 1, 2, 3]);
    }

    /// Parallel profiling must agree with standalone sequential maskings.
    #[test]
    fn batched_maskings_match_standalone_calls() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(29, 64);
        let text = model
            .tokenize("many plain words to mask one at a time in order")
            .unwrap();
        let profile: ImportanceProfile<f64> = random_importance(&text, text.n_words(), 1);
        let trace = profile_text(&model, &text, &profile, text.n_words()).unwrap();
        let reference = model.encode(&text).unwrap().sentence_embedding;
        for w in 0..text.n_words() {
            let masked = model.encode_masked(&text, w).unwrap();
            let expected = sensitivity_score(&reference, &masked).value;
            assert!((trace.sensitivities[w] - expected).abs() < 1e-6);
        }
    }

    /// A full-coverage profile restricted to a smaller selection equals
    /// the smaller profile's values on that selection.
    #[test]
    fn subset_of_full_profile_matches_smaller_k() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(31, 64);
        let text = model.tokenize("five words right over here").unwrap();
        let profile = profile_from(vec![0.5, 0.1, 0.4, 0.3, 0.2]);
        let full = profile_text(&model, &text, &profile, text.n_words()).unwrap();
        let small = profile_text(&model, &text, &profile, 2).unwrap();
        assert_eq!(small.selected, vec![0, 2]);
        for &w in &small.selected {
            assert!((small.sensitivities[w] - full.sensitivities[w]).abs() < 1e-12);
        }
        for w in 0..text.n_words() {
            if !small.selected.contains(&w) {
                assert_eq!(small.sensitivities[w], 0.0);
            }
        }
    }

    #[test]
    fn feature_tensor_zeroes_rows_off_the_selection() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(37, 64);
        let text = model.tokenize("a b c d e").unwrap();
        let profile = profile_from(vec![0.1, 0.9, 0.2, 0.8, 0.3]);
        let trace = profile_text(&model, &text, &profile, 2).unwrap();
        assert_eq!(trace.selected, vec![1, 3]);
        let tensor = build_feature_tensor(&text, &profile, &trace).unwrap();
        for w in [0, 2, 4] {
            assert_eq!(tensor.sensitivity(w), 0.0);
            assert_eq!(tensor.importance(w), 0.0);
        }
        assert_eq!(tensor.importance(1), 0.9);
        assert_eq!(tensor.importance(3), 0.8);

        // K >= N keeps every genuinely non-zero score.
        let full_trace = profile_text(&model, &text, &profile, 50).unwrap();
        let full = build_feature_tensor(&text, &profile, &full_trace).unwrap();
        for w in 0..5 {
            assert_eq!(full.importance(w), profile.scores[w]);
        }
    }

    #[test]
    fn feature_tensor_serde_round_trip_is_bit_identical() {
        let z = array![[0.1f64, 0.2], [0.0, 0.0], [1.0e-17, 3.5]];
        let tensor = FeatureTensor { z };
        let json = serde_json::to_string(&tensor).unwrap();
        let back: FeatureTensor<f64> = serde_json::from_str(&json).unwrap();
        for (a, b) in tensor.z.iter().zip(back.z.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    fn trace_with(values: &[f64]) -> SensitivityTrace<f64> {
        SensitivityTrace {
            selected: (0..values.len()).collect(),
            sensitivities: Array1::from_vec(values.to_vec()),
            reference_embedding: Array1::zeros(2),
            degenerate: vec![],
        }
    }

    #[test]
    fn instability_ratio_hand_cases() {
        let benign = vec![trace_with(&[0.01, 0.01]), trace_with(&[0.01])];
        let adv = vec![trace_with(&[0.02, 0.02, 0.02])];
        let ratio = instability_ratio(&benign, &adv).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);

        let same = instability_ratio(&benign, &benign).unwrap();
        assert!((same - 1.0).abs() < 1e-12);

        let zeros = vec![trace_with(&[0.0, 0.0])];
        assert!(matches!(
            instability_ratio(&zeros, &adv),
            Err(SensitivityError::DegenerateDenominator)
        ));
        assert!(matches!(
            instability_ratio(&[], &adv),
            Err(SensitivityError::EmptyCollection)
        ));
    }

    proptest! {
        /// Full-sort oracle for the selection rule.
        #[test]
        fn top_k_matches_a_full_sort_oracle(
            scores in proptest::collection::vec(0.0f64..1.0, 1..50),
            k in 1usize..25,
        ) {
            let p = profile_from(scores.clone());
            let got = select_top_k(&p, k);

            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            let mut expected: Vec<usize> = idx.into_iter().take(k.min(scores.len())).collect();
            expected.sort_unstable();
            prop_assert_eq!(got, expected);
        }

        /// Cosine distance stays within [0, 2] for arbitrary vectors.
        #[test]
        fn sensitivity_is_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let s = sensitivity_score(&Array1::from_vec(a), &Array1::from_vec(b));
            prop_assert!(s.value >= 0.0 && s.value <= 2.0);
        }
    }
}
