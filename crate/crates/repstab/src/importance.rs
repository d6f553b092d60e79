//! Per-word importance heuristics.
//!
//! Five ways to score how much each word matters to the classifier's
//! decision: gradient attribution (subtoken gradient norms), attention
//! rollout, Grad-SAM (attention times attention-gradient), a random
//! control, and integrated gradients. All of them return one score per
//! word, aggregated over the word's subtokens.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    Encoder, EncoderError, EncoderOutput, GradientBundle, LossTarget, TokenizedText,
};
use crate::num::{cast, Float};

/// Method tag without parameters, used for CLI flags and cache keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Gradient,
    Rollout,
    GradSam,
    Random,
    IntegratedGradients,
}

impl fmt::Display for ImportanceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ImportanceMethod::Gradient => "grad",
            ImportanceMethod::Rollout => "rollout",
            ImportanceMethod::GradSam => "gradsam",
            ImportanceMethod::Random => "random",
            ImportanceMethod::IntegratedGradients => "ig",
        };
        f.write_str(s)
    }
}

impl FromStr for ImportanceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grad" | "gradient" => Ok(ImportanceMethod::Gradient),
            "rollout" | "attention" => Ok(ImportanceMethod::Rollout),
            "gradsam" => Ok(ImportanceMethod::GradSam),
            "random" => Ok(ImportanceMethod::Random),
            "ig" | "integrated-gradients" => Ok(ImportanceMethod::IntegratedGradients),
            other => Err(format!("unknown importance method {other:?}")),
        }
    }
}

/// Baseline for the integrated-gradients path integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    ZeroEmbedding,
    /// The mask token's embedding at every non-special position
    /// (special positions keep their own embeddings).
    MaskEmbedding,
}

impl FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(BaselineMode::ZeroEmbedding),
            "mask" => Ok(BaselineMode::MaskEmbedding),
            other => Err(format!("unknown baseline {other:?} (expected zero|mask)")),
        }
    }
}

/// Method plus the parameters it ran with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MethodSpec {
    Gradient,
    Rollout,
    GradSam { relu: bool },
    Random { k: usize, seed: u64 },
    IntegratedGradients { steps: usize, baseline: BaselineMode },
}

impl MethodSpec {
    pub fn method(&self) -> ImportanceMethod {
        match self {
            MethodSpec::Gradient => ImportanceMethod::Gradient,
            MethodSpec::Rollout => ImportanceMethod::Rollout,
            MethodSpec::GradSam { .. } => ImportanceMethod::GradSam,
            MethodSpec::Random { .. } => ImportanceMethod::Random,
            MethodSpec::IntegratedGradients { .. } => ImportanceMethod::IntegratedGradients,
        }
    }
}

/// Per-word importance scores for one text.
#[derive(Debug, Clone)]
pub struct ImportanceProfile<F: Float> {
    pub method: MethodSpec,
    /// One score per word; non-negative except for Grad-SAM, which may be
    /// signed when the ReLU clamp is off.
    pub scores: Array1<F>,
}

impl<F: Float> ImportanceProfile<F> {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.scores.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("gradients cover {actual} subtokens but the text has {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("gradients were taken against {actual:?}, this heuristic needs {expected:?}")]
    LossTargetMismatch {
        expected: LossTarget,
        actual: LossTarget,
    },
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("integration step count must be at least 1")]
    InvalidSteps,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Sums subtoken values over each word's span.
fn per_word_sums<F: Float>(text: &TokenizedText, token_scores: &Array1<F>) -> Array1<F> {
    Array1::from_iter(text.word_spans.iter().map(|span| {
        span.clone()
            .map(|j| token_scores[j])
            .fold(F::zero(), |a, b| a + b)
    }))
}

/// Gradient attribution: each word scores the sum of its subtokens'
/// embedding-gradient L2 norms. Expects gradients against the predicted
/// class's cross-entropy.
pub fn gradient_attribution<F: Float>(
    text: &TokenizedText,
    grads: &GradientBundle<F>,
) -> Result<ImportanceProfile<F>, ImportanceError> {
    if grads.loss_target != LossTarget::PredictedClass {
        return Err(ImportanceError::LossTargetMismatch {
            expected: LossTarget::PredictedClass,
            actual: grads.loss_target,
        });
    }
    if grads.embedding_grads.nrows() != text.n_subtokens() {
        return Err(ImportanceError::ShapeMismatch {
            expected: text.n_subtokens(),
            actual: grads.embedding_grads.nrows(),
        });
    }
    let norms = Array1::from_iter(
        grads
            .embedding_grads
            .rows()
            .into_iter()
            .map(|row| row.fold(F::zero(), |acc, &v| acc + v * v).sqrt()),
    );
    let scores = per_word_sums(text, &norms);
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ImportanceError::NonFiniteGradient);
    }
    Ok(ImportanceProfile {
        method: MethodSpec::Gradient,
        scores,
    })
}

/// The rollout product matrix `R`: per layer, heads are averaged, mixed
/// with the identity (residual), row-normalized, and the layers are
/// multiplied in order.
pub fn rollout_matrix<F: Float>(attentions: &[Vec<Array2<F>>]) -> Array2<F> {
    let t = attentions[0][0].nrows();
    let floor: F = cast(1e-12);
    let half: F = cast(0.5);
    let mut rollout = Array2::eye(t);
    for layer in attentions {
        let heads: F = cast(layer.len() as f64);
        let mut avg: Array2<F> = Array2::zeros((t, t));
        for head in layer {
            avg = avg + head;
        }
        avg.mapv_inplace(|v| v / heads);
        // Residual mix, then row-normalize with a floored denominator.
        for i in 0..t {
            avg[[i, i]] = avg[[i, i]] + F::one();
        }
        avg.mapv_inplace(|v| v * half);
        for mut row in avg.rows_mut() {
            let sum = row.sum().max(floor);
            row.mapv_inplace(|v| v / sum);
        }
        rollout = rollout.dot(&avg);
    }
    rollout
}

/// Attention rollout: per-token attention mass is the column sum of the
/// rollout matrix; words sum their subtokens' mass.
pub fn attention_rollout<F: Float>(
    text: &TokenizedText,
    out: &EncoderOutput<F>,
) -> Result<ImportanceProfile<F>, ImportanceError> {
    let t = text.n_subtokens();
    if out.attentions.is_empty() || out.attentions[0].is_empty() {
        return Err(ImportanceError::ShapeMismatch {
            expected: t,
            actual: 0,
        });
    }
    if out.attentions[0][0].nrows() != t {
        return Err(ImportanceError::ShapeMismatch {
            expected: t,
            actual: out.attentions[0][0].nrows(),
        });
    }
    let rollout = rollout_matrix(&out.attentions);
    let mass = Array1::from_iter((0..t).map(|j| {
        (0..t).fold(F::zero(), |acc, i| acc + rollout[[i, j]])
    }));
    Ok(ImportanceProfile {
        method: MethodSpec::Rollout,
        scores: per_word_sums(text, &mass),
    })
}

/// Grad-SAM: element-wise product of attention weights and their
/// gradients, averaged over layers and heads; token scores are column
/// sums, words sum their subtokens. Expects gradients of the predicted
/// logit. `relu` clamps the per-entry products at zero before averaging.
pub fn grad_sam<F: Float>(
    text: &TokenizedText,
    out: &EncoderOutput<F>,
    grads: &GradientBundle<F>,
    relu: bool,
) -> Result<ImportanceProfile<F>, ImportanceError> {
    if grads.loss_target != LossTarget::PredictedLogit {
        return Err(ImportanceError::LossTargetMismatch {
            expected: LossTarget::PredictedLogit,
            actual: grads.loss_target,
        });
    }
    let t = text.n_subtokens();
    if out.attentions.len() != grads.attention_grads.len()
        || out.attentions.is_empty()
        || out.attentions[0].is_empty()
        || out.attentions[0][0].nrows() != t
    {
        return Err(ImportanceError::ShapeMismatch {
            expected: t,
            actual: out.attentions.first().and_then(|l| l.first()).map_or(0, |a| a.nrows()),
        });
    }

    let layers = out.attentions.len();
    let heads = out.attentions[0].len();
    let denom: F = cast((layers * heads) as f64);
    let mut averaged: Array2<F> = Array2::zeros((t, t));
    for (layer_attn, layer_grad) in out.attentions.iter().zip(grads.attention_grads.iter()) {
        for (attn, grad) in layer_attn.iter().zip(layer_grad.iter()) {
            for i in 0..t {
                for j in 0..t {
                    let mut g = grad[[i, j]] * attn[[i, j]];
                    if relu && g < F::zero() {
                        g = F::zero();
                    }
                    averaged[[i, j]] = averaged[[i, j]] + g;
                }
            }
        }
    }
    averaged.mapv_inplace(|v| v / denom);

    let token_scores = Array1::from_iter((0..t).map(|j| {
        (0..t).fold(F::zero(), |acc, i| acc + averaged[[i, j]])
    }));
    let scores = per_word_sums(text, &token_scores);
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ImportanceError::NonFiniteGradient);
    }
    Ok(ImportanceProfile {
        method: MethodSpec::GradSam { relu },
        scores,
    })
}

/// Random control: `min(k, N)` distinct words drawn uniformly get score 1,
/// everything else 0. Deterministic for a fixed seed.
pub fn random_importance<F: Float>(text: &TokenizedText, k: usize, seed: u64) -> ImportanceProfile<F> {
    let n = text.n_words();
    let take = k.min(n);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, n, take);
    let mut scores = Array1::zeros(n);
    for idx in chosen {
        scores[idx] = F::one();
    }
    ImportanceProfile {
        method: MethodSpec::Random { k, seed },
        scores,
    }
}

/// Signed per-subtoken integrated-gradients attributions (`T×d`).
///
/// Right-Riemann path integral from the baseline to the input embeddings
/// with `steps` interpolation points; the loss is the cross-entropy
/// against the class predicted on the unmodified input.
pub fn integrated_gradient_attributions<F: Float>(
    encoder: &(impl Encoder<F> + ?Sized),
    text: &TokenizedText,
    steps: usize,
    baseline: BaselineMode,
) -> Result<Array2<F>, ImportanceError> {
    if steps == 0 {
        return Err(ImportanceError::InvalidSteps);
    }
    let input = encoder.input_embeddings(text)?;
    let base = match baseline {
        BaselineMode::ZeroEmbedding => Array2::zeros(input.raw_dim()),
        BaselineMode::MaskEmbedding => {
            let mut b = input.clone();
            let mask_row = encoder.mask_embedding();
            for pos in text.non_special_positions() {
                b.row_mut(pos).assign(&mask_row);
            }
            b
        }
    };
    let target = encoder.encode(text)?.predicted_class;

    let diff = &input - &base;
    let mut grad_sum: Array2<F> = Array2::zeros(input.raw_dim());
    for step in 1..=steps {
        let alpha: F = cast(step as f64 / steps as f64);
        let point = &base + &diff.mapv(|v| v * alpha);
        let (_, g) = encoder.loss_grad_at_embeddings(text, &point, target)?;
        grad_sum += &g;
    }
    let inv: F = cast(1.0 / steps as f64);
    let attributions = &diff * &grad_sum.mapv(|v| v * inv);
    if attributions.iter().any(|v| !v.is_finite()) {
        return Err(ImportanceError::NonFiniteGradient);
    }
    Ok(attributions)
}

/// Integrated gradients as a per-word importance profile: the L2 norms of
/// each subtoken's attribution row, summed over the word's span.
pub fn integrated_gradients<F: Float>(
    encoder: &(impl Encoder<F> + ?Sized),
    text: &TokenizedText,
    steps: usize,
    baseline: BaselineMode,
) -> Result<ImportanceProfile<F>, ImportanceError> {
    let attributions = integrated_gradient_attributions(encoder, text, steps, baseline)?;
    let norms = Array1::from_iter(
        attributions
            .rows()
            .into_iter()
            .map(|row| row.fold(F::zero(), |acc, &v| acc + v * v).sqrt()),
    );
    Ok(ImportanceProfile {
        method: MethodSpec::IntegratedGradients { steps, baseline },
        scores: per_word_sums(text, &norms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ChunkTokenizer, TransformerClassifier};
    use ndarray::array;
    use proptest::prelude::*;

    fn tok() -> ChunkTokenizer {
        ChunkTokenizer::new(256, 4, 64)
    }

    /// A bare two-word text with no special tokens, for pure-math cases.
    fn two_word_text() -> TokenizedText {
        TokenizedText {
            words: vec!["x".into(), "y".into()],
            subtoken_ids: vec![10, 11],
            word_spans: vec![0..1, 1..2],
            special_mask: vec![false, false],
            mask_token_id: 3,
        }
    }

    fn bundle_with_grads(
        grads: Array2<f64>,
        loss_target: LossTarget,
    ) -> GradientBundle<f64> {
        GradientBundle {
            embedding_grads: grads,
            attention_grads: vec![],
            loss_value: 0.0,
            loss_target,
        }
    }

    #[test]
    fn gradient_attribution_sums_subtoken_norms() {
        // "cdefgh" splits into two chunks; give them norms 0.3 and 0.4.
        let text = tok().tokenize("ab cdefgh").unwrap();
        assert_eq!(text.word_spans, vec![1..2, 2..4]);
        let mut grads = Array2::zeros((text.n_subtokens(), 8));
        grads[[1, 0]] = 0.5;
        grads[[2, 2]] = 0.3;
        grads[[3, 5]] = -0.4;
        let profile =
            gradient_attribution(&text, &bundle_with_grads(grads, LossTarget::PredictedClass))
                .unwrap();
        assert!((profile.scores[0] - 0.5).abs() < 1e-12);
        assert!((profile.scores[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gradient_attribution_zero_grads_give_zero_scores() {
        let text = tok().tokenize("three short words").unwrap();
        let grads = Array2::zeros((text.n_subtokens(), 8));
        let profile =
            gradient_attribution(&text, &bundle_with_grads(grads, LossTarget::PredictedClass))
                .unwrap();
        assert!(profile.scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_attribution_rejects_wrong_target_and_shape() {
        let text = tok().tokenize("ab cd").unwrap();
        let grads = Array2::zeros((text.n_subtokens(), 8));
        assert!(matches!(
            gradient_attribution(&text, &bundle_with_grads(grads.clone(), LossTarget::PredictedLogit)),
            Err(ImportanceError::LossTargetMismatch { .. })
        ));
        let bad = Array2::zeros((text.n_subtokens() + 1, 8));
        assert!(matches!(
            gradient_attribution(&text, &bundle_with_grads(bad, LossTarget::PredictedClass)),
            Err(ImportanceError::ShapeMismatch { .. })
        ));
    }

    /// Scalar-loop recomputation against the stub encoder.
    #[test]
    fn gradient_attribution_matches_a_scalar_loop() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(11, 64);
        let text = model.tokenize("four plain words here").unwrap();
        let (_, grads) = model
            .encode_with_gradients(&text, LossTarget::PredictedClass)
            .unwrap();
        let profile = gradient_attribution(&text, &grads).unwrap();
        for (w, span) in text.word_spans.iter().enumerate() {
            let mut expected = 0.0f64;
            for j in span.clone() {
                let mut sq = 0.0;
                for d in 0..grads.embedding_grads.ncols() {
                    sq += grads.embedding_grads[[j, d]] * grads.embedding_grads[[j, d]];
                }
                expected += sq.sqrt();
            }
            assert!((profile.scores[w] - expected).abs() < 1e-12);
        }
    }

    fn fake_output(attentions: Vec<Vec<Array2<f64>>>) -> EncoderOutput<f64> {
        let t = attentions[0][0].nrows();
        EncoderOutput {
            sentence_embedding: Array1::zeros(4),
            hidden_states: Array2::zeros((t, 4)),
            attentions,
            logits: Array1::zeros(2),
            predicted_class: 0,
        }
    }

    #[test]
    fn rollout_identity_attention_scores_span_sizes() {
        let text = tok().tokenize("ab cdefgh").unwrap(); // spans of size 1 and 2
        let t = text.n_subtokens();
        let eye: Array2<f64> = Array2::eye(t);
        let out = fake_output(vec![vec![eye.clone(), eye]]);
        let profile = attention_rollout(&text, &out).unwrap();
        assert!((profile.scores[0] - 1.0).abs() < 1e-12);
        assert!((profile.scores[1] - 2.0).abs() < 1e-12);
    }

    /// Hand-multiplied single-layer swap case.
    #[test]
    fn rollout_swap_attention_balances_mass() {
        let text = two_word_text();
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        let out = fake_output(vec![vec![swap]]);
        // 0.5*A + 0.5*I = [[0.5,0.5],[0.5,0.5]] -> rows already sum to 1.
        let profile = attention_rollout(&text, &out).unwrap();
        assert!((profile.scores[0] - 1.0).abs() < 1e-12);
        assert!((profile.scores[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grad_sam_zero_gradients_give_zero_scores() {
        let text = two_word_text();
        let attn = array![[0.7, 0.3], [0.2, 0.8]];
        let out = fake_output(vec![vec![attn.clone()]]);
        let grads = GradientBundle {
            embedding_grads: Array2::zeros((2, 4)),
            attention_grads: vec![vec![Array2::zeros((2, 2))]],
            loss_value: 0.0,
            loss_target: LossTarget::PredictedLogit,
        };
        let profile = grad_sam(&text, &out, &grads, false).unwrap();
        assert!(profile.scores.iter().all(|&v| v == 0.0));
    }

    /// One layer, one head, every entry checked by hand.
    #[test]
    fn grad_sam_matches_hand_summed_columns() {
        let text = two_word_text();
        let attn = array![[0.7, 0.3], [0.2, 0.8]];
        let grad = array![[0.1, -0.2], [0.4, 0.5]];
        let out = fake_output(vec![vec![attn.clone()]]);
        let grads = GradientBundle {
            embedding_grads: Array2::zeros((2, 4)),
            attention_grads: vec![vec![grad.clone()]],
            loss_value: 0.0,
            loss_target: LossTarget::PredictedLogit,
        };
        let profile = grad_sam(&text, &out, &grads, false).unwrap();
        // G = A ⊙ D; column sums: col0 = 0.07 + 0.08, col1 = -0.06 + 0.40.
        assert!((profile.scores[0] - 0.15).abs() < 1e-12);
        assert!((profile.scores[1] - 0.34).abs() < 1e-12);

        // With the ReLU clamp the -0.06 entry drops out.
        let clamped = grad_sam(&text, &out, &grads, true).unwrap();
        assert!((clamped.scores[1] - 0.40).abs() < 1e-12);

        // Doubling the gradients doubles every unclamped score.
        let doubled = GradientBundle {
            embedding_grads: Array2::zeros((2, 4)),
            attention_grads: vec![vec![grad.mapv(|v| 2.0 * v)]],
            loss_value: 0.0,
            loss_target: LossTarget::PredictedLogit,
        };
        let profile2 = grad_sam(&text, &out, &doubled, false).unwrap();
        for (a, b) in profile.scores.iter().zip(profile2.scores.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_importance_clips_and_repeats() {
        let text = tok().tokenize("one two three").unwrap();
        let p: ImportanceProfile<f64> = random_importance(&text, 5, 9);
        assert!(p.scores.iter().all(|&v| v == 1.0));
        let a: ImportanceProfile<f64> = random_importance(&text, 2, 123);
        let b: ImportanceProfile<f64> = random_importance(&text, 2, 123);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.scores.iter().filter(|&&v| v == 1.0).count(), 2);
    }

    /// Monte-Carlo frequency of each index under uniform sampling.
    #[test]
    fn random_importance_selects_uniformly() {
        let words = (0..10).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let text = tok().tokenize(&words).unwrap();
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for seed in 0..draws {
            let p: ImportanceProfile<f64> = random_importance(&text, 2, seed);
            for (i, &v) in p.scores.iter().enumerate() {
                if v == 1.0 {
                    counts[i] += 1;
                }
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn integrated_gradients_on_a_constant_model_are_zero() {
        let mut model: TransformerClassifier<f64> = TransformerClassifier::stub(5, 64);
        model.zero_parameters();
        let text = model.tokenize("nothing to see").unwrap();
        let attr =
            integrated_gradient_attributions(&model, &text, 10, BaselineMode::ZeroEmbedding)
                .unwrap();
        assert!(attr.iter().all(|&v| v == 0.0));
    }

    /// Completeness: summed attributions approximate the loss difference
    /// between the input and the baseline.
    #[test]
    fn integrated_gradients_satisfy_completeness_on_the_stub() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(17, 64);
        let text = model.tokenize("a modest probe sentence").unwrap();
        let target = model.encode(&text).unwrap().predicted_class;
        for baseline in [BaselineMode::MaskEmbedding, BaselineMode::ZeroEmbedding] {
            let attr =
                integrated_gradient_attributions(&model, &text, 100, baseline).unwrap();
            let total: f64 = attr.iter().sum();

            let input = model.input_embeddings(&text).unwrap();
            let base = match baseline {
                BaselineMode::ZeroEmbedding => Array2::zeros(input.raw_dim()),
                BaselineMode::MaskEmbedding => {
                    let mut b = input.clone();
                    for pos in text.non_special_positions() {
                        b.row_mut(pos).assign(&model.mask_embedding());
                    }
                    b
                }
            };
            let (loss_x, _) = model.loss_grad_at_embeddings(&text, &input, target).unwrap();
            let (loss_b, _) = model.loss_grad_at_embeddings(&text, &base, target).unwrap();
            let expected = loss_x - loss_b;
            let rel = (total - expected).abs() / expected.abs().max(1e-9);
            assert!(rel < 0.02, "completeness gap {rel} for {baseline:?}");
        }
    }

    #[test]
    fn integrated_gradients_reject_zero_steps() {
        let model: TransformerClassifier<f64> = TransformerClassifier::stub(5, 64);
        let text = model.tokenize("steps check").unwrap();
        assert!(matches!(
            integrated_gradients(&model, &text, 0, BaselineMode::MaskEmbedding),
            Err(ImportanceError::InvalidSteps)
        ));
    }

    #[test]
    fn permuting_rows_outside_a_span_leaves_its_score_unchanged() {
        let text = tok().tokenize("ab cdefgh ij").unwrap();
        let mut grads = Array2::zeros((text.n_subtokens(), 4));
        for (i, mut row) in grads.rows_mut().into_iter().enumerate() {
            row.fill(0.1 * (i as f64 + 1.0));
        }
        let before =
            gradient_attribution(&text, &bundle_with_grads(grads.clone(), LossTarget::PredictedClass))
                .unwrap();
        // Swap the rows of words 0 and 2 (spans 1..2 and 4..5); word 1
        // (span 2..4) must keep its score.
        let mut permuted = grads.clone();
        let tmp = permuted.row(1).to_owned();
        permuted.row_mut(1).assign(&grads.row(4));
        permuted.row_mut(4).assign(&tmp);
        let after =
            gradient_attribution(&text, &bundle_with_grads(permuted, LossTarget::PredictedClass))
                .unwrap();
        assert!((before.scores[1] - after.scores[1]).abs() < 1e-12);
    }

    proptest! {
        /// Conservation: total rollout mass equals the token count.
        #[test]
        fn rollout_mass_is_conserved(
            layers in 1usize..4,
            heads in 1usize..4,
            t in 2usize..10,
            seed in 0u64..1000,
        ) {
            use rand::Rng;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let attentions: Vec<Vec<Array2<f64>>> = (0..layers)
                .map(|_| {
                    (0..heads)
                        .map(|_| {
                            let mut m = Array2::from_shape_fn((t, t), |_| rng.gen_range(0.0..1.0));
                            for mut row in m.rows_mut() {
                                let s = row.sum();
                                row.mapv_inplace(|v| v / s);
                            }
                            m
                        })
                        .collect()
                })
                .collect();
            let words: Vec<String> = (0..t).map(|i| format!("w{i}")).collect();
            let text = TokenizedText {
                words: words.clone(),
                subtoken_ids: vec![10; t],
                word_spans: (0..t).map(|i| i..i + 1).collect(),
                special_mask: vec![false; t],
                mask_token_id: 3,
            };
            let out = fake_output(attentions);
            let profile = attention_rollout(&text, &out).unwrap();
            let total: f64 = profile.scores.iter().sum();
            prop_assert!((total - t as f64).abs() < 1e-5);
        }

        /// Scaling gradients by c > 0 scales scores by c and keeps the
        /// descending order of words unchanged.
        #[test]
        fn gradient_attribution_is_scale_equivariant(
            c in 0.1f64..10.0,
            seed in 0u64..100,
        ) {
            use rand::Rng;
            let text = tok().tokenize("aa bbbbbb cc dddddd ee").unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let grads = Array2::from_shape_fn((text.n_subtokens(), 6), |_| rng.gen_range(-1.0..1.0));
            let base = gradient_attribution(
                &text,
                &bundle_with_grads(grads.clone(), LossTarget::PredictedClass),
            ).unwrap();
            let scaled = gradient_attribution(
                &text,
                &bundle_with_grads(grads.mapv(|v| c * v), LossTarget::PredictedClass),
            ).unwrap();
            for (a, b) in base.scores.iter().zip(scaled.scores.iter()) {
                prop_assert!((c * a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
            let order = |s: &Array1<f64>| {
                let mut idx: Vec<usize> = (0..s.len()).collect();
                idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap().then(i.cmp(&j)));
                idx
            };
            prop_assert_eq!(order(&base.scores), order(&scaled.scores));
        }
    }
}
