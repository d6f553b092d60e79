//! Narrow bridge to a frozen transformer classifier.
//!
//! The rest of the crate only ever needs four things from the victim
//! model: sentence embeddings, per-layer attention matrices, gradients at
//! the input embeddings, and gradients at the attention weights. The
//! [`Encoder`] trait exposes exactly that, plus tokenization, so the
//! heuristics and the sensitivity profiler stay backend-agnostic.

mod tokenize;
mod transformer;

pub use tokenize::{ChunkTokenizer, TokenizedText, CLS_ID, MASK_ID, MASK_SURFACE, PAD_ID, SEP_ID};
pub use transformer::{train_classifier, ClassifierTrainConfig, TransformerClassifier, TransformerConfig};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::num::Float;

/// Which scalar the gradients are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossTarget {
    /// Cross-entropy of the logits against the predicted class.
    PredictedClass,
    /// The predicted class's raw logit.
    PredictedLogit,
}

/// Everything a single forward pass exposes.
#[derive(Debug, Clone)]
pub struct EncoderOutput<F: Float> {
    /// Mean of the final hidden states over non-special subtokens.
    pub sentence_embedding: Array1<F>,
    /// Final-layer hidden states, one row per subtoken.
    pub hidden_states: Array2<F>,
    /// Attention probabilities indexed `[layer][head]`, each `T×T`.
    pub attentions: Vec<Vec<Array2<F>>>,
    pub logits: Array1<F>,
    pub predicted_class: usize,
}

impl<F: Float> EncoderOutput<F> {
    pub fn n_layers(&self) -> usize {
        self.attentions.len()
    }

    pub fn n_heads(&self) -> usize {
        self.attentions.first().map_or(0, |l| l.len())
    }

    pub fn seq_len(&self) -> usize {
        self.hidden_states.nrows()
    }

    /// Largest deviation of any attention row sum from 1.
    pub fn max_attention_row_sum_error(&self) -> F {
        let mut worst = F::zero();
        for layer in &self.attentions {
            for head in layer {
                for row in head.rows() {
                    let err = (row.sum() - F::one()).abs();
                    if err > worst {
                        worst = err;
                    }
                }
            }
        }
        worst
    }

    /// Largest deviation of the stored sentence embedding from the
    /// recomputed non-special mean of `hidden_states`.
    pub fn sentence_embedding_error(&self, text: &TokenizedText) -> F {
        let rows: Vec<usize> = text.non_special_positions();
        let n = F::from_usize(rows.len()).unwrap();
        let mut worst = F::zero();
        for d in 0..self.hidden_states.ncols() {
            let mut acc = F::zero();
            for &r in &rows {
                acc += self.hidden_states[[r, d]];
            }
            let err = (acc / n - self.sentence_embedding[d]).abs();
            if err > worst {
                worst = err;
            }
        }
        worst
    }
}

/// Gradients from one backward pass, shaped like the matching
/// [`EncoderOutput`].
#[derive(Debug, Clone)]
pub struct GradientBundle<F: Float> {
    /// Loss gradient at the input-embedding rows (taken at the token
    /// embeddings after lookup, before the positional addition).
    pub embedding_grads: Array2<F>,
    /// Loss gradient at the attention probabilities, `[layer][head]`.
    pub attention_grads: Vec<Vec<Array2<F>>>,
    pub loss_value: F,
    pub loss_target: LossTarget,
}

impl<F: Float> GradientBundle<F> {
    pub fn all_finite(&self) -> bool {
        self.loss_value.is_finite()
            && self.embedding_grads.iter().all(|v| v.is_finite())
            && self
                .attention_grads
                .iter()
                .flatten()
                .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("word {word:?} produced no subtokens")]
    AlignmentFailure { word: String },
    #[error("encoder backend failure: {0}")]
    EncoderFailure(String),
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("word index {index} out of range for {len} words")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown encoder spec {0:?} (expected \"stub:<seed>\" or \"file:<path>\")")]
    UnknownEncoder(String),
}

/// Frozen-model interface. Implementations never mutate their parameters;
/// all methods are safe to call concurrently.
pub trait Encoder<F: Float>: Send + Sync {
    /// Identifier recorded in manifests and cache lines.
    fn name(&self) -> &str;

    fn tokenize(&self, raw_text: &str) -> Result<TokenizedText, EncoderError>;

    fn encode(&self, text: &TokenizedText) -> Result<EncoderOutput<F>, EncoderError>;

    fn encode_with_gradients(
        &self,
        text: &TokenizedText,
        loss_target: LossTarget,
    ) -> Result<(EncoderOutput<F>, GradientBundle<F>), EncoderError>;

    /// Sentence embedding with word `word_index`'s whole subtoken span
    /// replaced by a single mask token.
    fn encode_masked(&self, text: &TokenizedText, word_index: usize)
        -> Result<Array1<F>, EncoderError>;

    /// Token embeddings after lookup (pre-positional), one row per subtoken.
    fn input_embeddings(&self, text: &TokenizedText) -> Result<Array2<F>, EncoderError>;

    /// The mask token's embedding row.
    fn mask_embedding(&self) -> Array1<F>;

    /// Cross-entropy loss (against `target_class`) and its gradient at the
    /// provided input-embedding rows. Used by path-integral attribution.
    fn loss_grad_at_embeddings(
        &self,
        text: &TokenizedText,
        embeddings: &Array2<F>,
        target_class: usize,
    ) -> Result<(F, Array2<F>), EncoderError>;

    /// Checksum over all parameters; unchanged across calls by contract.
    fn param_checksum(&self) -> String;
}

/// Builds an encoder from its spec string.
///
/// * `stub:<seed>` — deterministic randomly-initialized 2-layer, 2-head,
///   8-dimensional transformer, for tests and demos.
/// * `file:<path>` — a serialized [`TransformerClassifier`] checkpoint.
pub fn encoder_from_spec<F: Float>(
    spec: &str,
    max_length: usize,
) -> Result<Box<dyn Encoder<F>>, EncoderError> {
    if let Some(seed) = spec.strip_prefix("stub:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| EncoderError::UnknownEncoder(spec.to_string()))?;
        return Ok(Box::new(TransformerClassifier::stub(seed, max_length)));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let model = TransformerClassifier::load(std::path::Path::new(path))
            .map_err(|e| EncoderError::EncoderFailure(format!("loading {path}: {e}")))?;
        return Ok(Box::new(model));
    }
    Err(EncoderError::UnknownEncoder(spec.to_string()))
}
