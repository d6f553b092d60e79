//! A small trainable transformer classifier used as the victim model.
//!
//! The architecture is a standard post-norm encoder stack: token plus
//! learned positional embeddings, multi-head self-attention with residual
//! and layer norm, a GELU feed-forward block, and a linear head over the
//! mean of the final non-special hidden states. That mean is also the
//! sentence embedding, so the representation the profiler probes is the
//! one the classifier actually uses.
//!
//! Forward passes run on a [`Tape`], which is what lets `encode_with_gradients`
//! hand back gradients at the input embeddings and at every attention
//! matrix without any model-specific backward code.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::num::{cast, Float};
use crate::opt::{AdamW, AdamWConfig};
use crate::params::{normal_init, uniform_init, ParamId, ParamRecord, ParamSet, ParamVars};

use super::tokenize::{ChunkTokenizer, TokenizedText, MASK_ID};
use super::{Encoder, EncoderError, EncoderOutput, GradientBundle, LossTarget};

const CHECKPOINT_FORMAT: &str = "repstab-encoder-v1";

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_length: usize,
    pub classes: usize,
    /// Character width of one hashed subtoken chunk.
    pub chunk_len: usize,
}

impl TransformerConfig {
    /// The fixed test stub: 2 layers, 2 heads, 8 dimensions.
    pub fn stub(max_length: usize) -> Self {
        TransformerConfig {
            vocab_size: 256,
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 32,
            max_length,
            classes: 2,
            chunk_len: 4,
        }
    }
}

struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Frozen (post-training) transformer classifier behind the [`Encoder`]
/// interface.
pub struct TransformerClassifier<F: Float> {
    cfg: TransformerConfig,
    params: ParamSet<F>,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
    tokenizer: ChunkTokenizer,
    name: String,
}

struct ForwardNodes {
    /// Token embeddings after lookup, before the positional addition.
    emb: Var,
    /// Attention probabilities, `[layer][head]`.
    attentions: Vec<Vec<Var>>,
    hidden: Var,
    sentence: Var,
    logits: Var,
}

impl<F: Float> TransformerClassifier<F> {
    pub fn new(cfg: TransformerConfig, seed: u64, name: impl Into<String>) -> Self {
        assert_eq!(cfg.dim % cfg.heads, 0, "dim must divide evenly into heads");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.dim;
        let wb = 1.0 / (d as f64).sqrt();
        let fb = 1.0 / (cfg.ff_dim as f64).sqrt();

        let tok_emb = params.add("tok_emb", normal_init(&mut rng, cfg.vocab_size, d, 0.1));
        let pos_emb = params.add("pos_emb", normal_init(&mut rng, cfg.max_length, d, 0.1));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                wq: params.add(p("wq"), uniform_init(&mut rng, d, d, wb)),
                bq: params.add(p("bq"), Array2::zeros((1, d))),
                wk: params.add(p("wk"), uniform_init(&mut rng, d, d, wb)),
                bk: params.add(p("bk"), Array2::zeros((1, d))),
                wv: params.add(p("wv"), uniform_init(&mut rng, d, d, wb)),
                bv: params.add(p("bv"), Array2::zeros((1, d))),
                wo: params.add(p("wo"), uniform_init(&mut rng, d, d, wb)),
                bo: params.add(p("bo"), Array2::zeros((1, d))),
                ln1_g: params.add(p("ln1_g"), Array2::ones((1, d))),
                ln1_b: params.add(p("ln1_b"), Array2::zeros((1, d))),
                ff1_w: params.add(p("ff1_w"), uniform_init(&mut rng, d, cfg.ff_dim, wb)),
                ff1_b: params.add(p("ff1_b"), Array2::zeros((1, cfg.ff_dim))),
                ff2_w: params.add(p("ff2_w"), uniform_init(&mut rng, cfg.ff_dim, d, fb)),
                ff2_b: params.add(p("ff2_b"), Array2::zeros((1, d))),
                ln2_g: params.add(p("ln2_g"), Array2::ones((1, d))),
                ln2_b: params.add(p("ln2_b"), Array2::zeros((1, d))),
            });
        }
        let head_w = params.add("head_w", uniform_init(&mut rng, d, cfg.classes, wb));
        let head_b = params.add("head_b", Array2::zeros((1, cfg.classes)));

        let tokenizer = ChunkTokenizer::new(cfg.vocab_size, cfg.chunk_len, cfg.max_length);
        TransformerClassifier {
            cfg,
            params,
            tok_emb,
            pos_emb,
            layers,
            head_w,
            head_b,
            tokenizer,
            name: name.into(),
        }
    }

    /// Deterministic random-weight stub for tests: 2 layers, 2 heads, d=8.
    pub fn stub(seed: u64, max_length: usize) -> Self {
        Self::new(TransformerConfig::stub(max_length), seed, format!("stub:{seed}"))
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &ChunkTokenizer {
        &self.tokenizer
    }

    /// Zeroes every parameter. Test hook: a zeroed model outputs constant
    /// logits, so all input gradients vanish.
    pub fn zero_parameters(&mut self) {
        for v in self.params.values_mut() {
            v.fill(F::zero());
        }
    }

    fn forward(
        &self,
        tape: &Tape<F>,
        vars: &ParamVars,
        ids: &[usize],
        non_special: &[usize],
        emb_override: Option<Var>,
    ) -> ForwardNodes {
        let t_len = emb_override.map_or(ids.len(), |v| tape.shape(v).0);
        let dh = self.cfg.dim / self.cfg.heads;
        let scale: F = cast(1.0 / (dh as f64).sqrt());
        let eps: F = cast(1e-5);

        let emb = emb_override.unwrap_or_else(|| tape.gather_rows(vars.var(self.tok_emb), ids));
        let positions: Vec<usize> = (0..t_len).collect();
        let pos = tape.gather_rows(vars.var(self.pos_emb), &positions);
        let mut x = tape.add(emb, pos);

        let mut attentions = Vec::with_capacity(self.cfg.layers);
        for layer in &self.layers {
            let q = tape.add_row(tape.matmul(x, vars.var(layer.wq)), vars.var(layer.bq));
            let k = tape.add_row(tape.matmul(x, vars.var(layer.wk)), vars.var(layer.bk));
            let v = tape.add_row(tape.matmul(x, vars.var(layer.wv)), vars.var(layer.bv));

            let mut layer_attn = Vec::with_capacity(self.cfg.heads);
            let mut head_ctx = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi);
                let kh = tape.slice_cols(k, lo, hi);
                let vh = tape.slice_cols(v, lo, hi);
                let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
                let attn = tape.softmax_rows(scores);
                layer_attn.push(attn);
                head_ctx.push(tape.matmul(attn, vh));
            }
            attentions.push(layer_attn);

            let ctx = tape.concat_cols(&head_ctx);
            let proj = tape.add_row(tape.matmul(ctx, vars.var(layer.wo)), vars.var(layer.bo));
            x = tape.layer_norm_rows(
                tape.add(x, proj),
                vars.var(layer.ln1_g),
                vars.var(layer.ln1_b),
                eps,
            );

            let ff = tape.add_row(tape.matmul(x, vars.var(layer.ff1_w)), vars.var(layer.ff1_b));
            let ff = tape.gelu(ff);
            let ff = tape.add_row(tape.matmul(ff, vars.var(layer.ff2_w)), vars.var(layer.ff2_b));
            x = tape.layer_norm_rows(
                tape.add(x, ff),
                vars.var(layer.ln2_g),
                vars.var(layer.ln2_b),
                eps,
            );
        }

        let pooled = tape.gather_rows(x, non_special);
        let sentence = tape.mean_rows(pooled);
        let logits = tape.add_row(tape.matmul(sentence, vars.var(self.head_w)), vars.var(self.head_b));

        ForwardNodes {
            emb,
            attentions,
            hidden: x,
            sentence,
            logits,
        }
    }

    fn output_from_nodes(&self, tape: &Tape<F>, nodes: &ForwardNodes) -> EncoderOutput<F> {
        let logits2 = tape.value(nodes.logits);
        let logits = logits2.row(0).to_owned();
        let predicted_class = argmax(&logits);
        EncoderOutput {
            sentence_embedding: tape.value(nodes.sentence).row(0).to_owned(),
            hidden_states: tape.value(nodes.hidden),
            attentions: nodes
                .attentions
                .iter()
                .map(|layer| layer.iter().map(|&a| tape.value(a)).collect())
                .collect(),
            logits,
            predicted_class,
        }
    }

    /// Serializes the model to a JSON checkpoint.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let ckpt = TransformerCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.cfg,
            params: self.params.to_records(),
        };
        let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        std::fs::write(path, json)
    }

    /// Loads a checkpoint written by [`TransformerClassifier::save`].
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let ckpt: TransformerCheckpoint =
            serde_json::from_str(&raw).map_err(|e| e.to_string())?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(format!(
                "checkpoint format {:?} not supported (expected {CHECKPOINT_FORMAT:?})",
                ckpt.format
            ));
        }
        let mut model = Self::new(ckpt.config, 0, format!("file:{}", path.display()));
        let loaded: ParamSet<F> =
            ParamSet::from_records(&ckpt.params).ok_or("malformed parameter records")?;
        if loaded.len() != model.params.len() {
            return Err("parameter count mismatch".into());
        }
        for (i, (name, value)) in loaded.iter().enumerate() {
            let expected_name = {
                let (n, v) = model.params.iter().nth(i).unwrap();
                if v.raw_dim() != value.raw_dim() {
                    return Err(format!("shape mismatch for parameter {name}"));
                }
                n.to_string()
            };
            if expected_name != name {
                return Err(format!("unexpected parameter {name} (wanted {expected_name})"));
            }
            model.params.values_mut()[i] = value.clone();
        }
        Ok(model)
    }
}

fn argmax<F: Float>(v: &Array1<F>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<F: Float> Encoder<F> for TransformerClassifier<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn tokenize(&self, raw_text: &str) -> Result<TokenizedText, EncoderError> {
        self.tokenizer.tokenize(raw_text)
    }

    fn encode(&self, text: &TokenizedText) -> Result<EncoderOutput<F>, EncoderError> {
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let nodes = self.forward(
            &tape,
            &vars,
            &text.subtoken_ids,
            &text.non_special_positions(),
            None,
        );
        Ok(self.output_from_nodes(&tape, &nodes))
    }

    fn encode_with_gradients(
        &self,
        text: &TokenizedText,
        loss_target: LossTarget,
    ) -> Result<(EncoderOutput<F>, GradientBundle<F>), EncoderError> {
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let nodes = self.forward(
            &tape,
            &vars,
            &text.subtoken_ids,
            &text.non_special_positions(),
            None,
        );
        let output = self.output_from_nodes(&tape, &nodes);
        let loss = match loss_target {
            LossTarget::PredictedClass => {
                tape.cross_entropy_mean(nodes.logits, &[output.predicted_class])
            }
            LossTarget::PredictedLogit => tape.pick_scalar(nodes.logits, 0, output.predicted_class),
        };
        let loss_value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss);
        let t_len = text.subtoken_ids.len();
        let bundle = GradientBundle {
            embedding_grads: grads.wrt_or_zero(nodes.emb, (t_len, self.cfg.dim)),
            attention_grads: nodes
                .attentions
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|&a| grads.wrt_or_zero(a, (t_len, t_len)))
                        .collect()
                })
                .collect(),
            loss_value,
            loss_target,
        };
        if !bundle.all_finite() {
            return Err(EncoderError::NonFiniteGradient);
        }
        Ok((output, bundle))
    }

    fn encode_masked(
        &self,
        text: &TokenizedText,
        word_index: usize,
    ) -> Result<Array1<F>, EncoderError> {
        let (ids, specials) = text.masked_sequence(word_index)?;
        let non_special: Vec<usize> = specials
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (!s).then_some(i))
            .collect();
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let nodes = self.forward(&tape, &vars, &ids, &non_special, None);
        Ok(tape.value(nodes.sentence).row(0).to_owned())
    }

    fn input_embeddings(&self, text: &TokenizedText) -> Result<Array2<F>, EncoderError> {
        let table = self.params.get(self.tok_emb);
        let mut out = Array2::zeros((text.subtoken_ids.len(), self.cfg.dim));
        for (row, &id) in text.subtoken_ids.iter().enumerate() {
            if id >= table.nrows() {
                return Err(EncoderError::EncoderFailure(format!(
                    "subtoken id {id} outside vocabulary"
                )));
            }
            out.row_mut(row).assign(&table.row(id));
        }
        Ok(out)
    }

    fn mask_embedding(&self) -> Array1<F> {
        self.params.get(self.tok_emb).row(MASK_ID).to_owned()
    }

    fn loss_grad_at_embeddings(
        &self,
        text: &TokenizedText,
        embeddings: &Array2<F>,
        target_class: usize,
    ) -> Result<(F, Array2<F>), EncoderError> {
        if embeddings.nrows() != text.subtoken_ids.len() || embeddings.ncols() != self.cfg.dim {
            return Err(EncoderError::EncoderFailure(
                "embedding override shape does not match the text".into(),
            ));
        }
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let emb = tape.input(embeddings.clone());
        let nodes = self.forward(
            &tape,
            &vars,
            &text.subtoken_ids,
            &text.non_special_positions(),
            Some(emb),
        );
        let loss = tape.cross_entropy_mean(nodes.logits, &[target_class]);
        let loss_value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss);
        let g = grads.wrt_or_zero(emb, (embeddings.nrows(), embeddings.ncols()));
        if !loss_value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteGradient);
        }
        Ok((loss_value, g))
    }

    fn param_checksum(&self) -> String {
        self.params.checksum()
    }
}

#[derive(Serialize, Deserialize)]
struct TransformerCheckpoint {
    format: String,
    config: TransformerConfig,
    params: Vec<ParamRecord>,
}

/// Victim training settings.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 4,
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Trains `model` on labeled texts and returns the final training accuracy.
///
/// This is the only place the classifier's parameters move; once wrapped
/// behind [`Encoder`], the model is read-only.
pub fn train_classifier<F: Float>(
    model: &mut TransformerClassifier<F>,
    data: &[(String, usize)],
    cfg: ClassifierTrainConfig,
) -> Result<f64, EncoderError> {
    let tokenized: Vec<(TokenizedText, usize)> = data
        .iter()
        .map(|(text, label)| model.tokenize(text).map(|t| (t, *label)))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        &model.params,
    );

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let vars = model.params.load(&tape);
            let mut logit_rows = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (text, label) = &tokenized[i];
                let nodes = model.forward(
                    &tape,
                    &vars,
                    &text.subtoken_ids,
                    &text.non_special_positions(),
                    None,
                );
                logit_rows.push(nodes.logits);
                targets.push(*label);
            }
            let logits = tape.concat_rows(&logit_rows);
            let loss = tape.cross_entropy_mean(logits, &targets);
            if !tape.value(loss)[[0, 0]].is_finite() {
                return Err(EncoderError::NonFiniteGradient);
            }
            let grads = tape.backward(loss);
            let g = model.params.collect_grads(&vars, &grads);
            opt.step(&mut model.params, &g);
        }
    }

    // Final fit accuracy on the training data.
    let mut correct = 0usize;
    for (text, label) in &tokenized {
        let out = model.encode(text)?;
        if out.predicted_class == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / tokenized.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub() -> TransformerClassifier<f64> {
        TransformerClassifier::stub(42, 64)
    }

    #[test]
    fn sentence_embedding_is_the_non_special_mean() {
        let model = stub();
        let text = model.tokenize("The film was awful").unwrap();
        let out = model.encode(&text).unwrap();
        assert!(out.sentence_embedding_error(&text) < 1e-6);
    }

    #[test]
    fn single_subtoken_word_embedding_equals_its_hidden_state() {
        let model = stub();
        let text = model.tokenize("ok").unwrap();
        assert_eq!(text.n_words(), 1);
        assert_eq!(text.word_spans[0].len(), 1);
        let out = model.encode(&text).unwrap();
        let row = out.hidden_states.row(text.word_spans[0].start);
        for (a, b) in out.sentence_embedding.iter().zip(row.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let model = stub();
        let text = model.tokenize("a longer piece of text here").unwrap();
        let out = model.encode(&text).unwrap();
        assert_eq!(out.n_layers(), 2);
        assert_eq!(out.n_heads(), 2);
        assert!(out.max_attention_row_sum_error() < 1e-5);
    }

    #[test]
    fn repeated_encodes_are_bit_identical_and_leave_params_untouched() {
        let model = stub();
        let text = model.tokenize("determinism check").unwrap();
        let before = model.param_checksum();
        let a = model.encode(&text).unwrap();
        let b = model.encode(&text).unwrap();
        assert_eq!(before, model.param_checksum());
        for (x, y) in a.sentence_embedding.iter().zip(b.sentence_embedding.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.logits.iter().zip(b.logits.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn predicted_class_loss_matches_cross_entropy_of_logits() {
        let model = stub();
        let text = model.tokenize("loss check words").unwrap();
        let (out, bundle) = model
            .encode_with_gradients(&text, LossTarget::PredictedClass)
            .unwrap();
        let max = out.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + out.logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let expected = lse - out.logits[out.predicted_class];
        assert!((bundle.loss_value - expected).abs() < 1e-12);
        assert_eq!(bundle.loss_target, LossTarget::PredictedClass);
    }

    #[test]
    fn zeroed_model_has_zero_input_gradients() {
        let mut model = stub();
        model.zero_parameters();
        let text = model.tokenize("all zeros here").unwrap();
        let (_, bundle) = model
            .encode_with_gradients(&text, LossTarget::PredictedClass)
            .unwrap();
        assert!(bundle.embedding_grads.iter().all(|&g| g == 0.0));
    }

    /// Central-difference check of the embedding gradient on the stub.
    #[test]
    fn embedding_gradients_match_finite_differences() {
        let model = stub();
        let text = model.tokenize("gradient probe text").unwrap();
        let out = model.encode(&text).unwrap();
        let target = out.predicted_class;
        let emb = model.input_embeddings(&text).unwrap();
        let (_, analytic) = model.loss_grad_at_embeddings(&text, &emb, target).unwrap();

        let h = 1e-4;
        for &(r, c) in &[(0usize, 0usize), (1, 3), (2, 7), (3, 4)] {
            let mut plus = emb.clone();
            plus[[r, c]] += h;
            let mut minus = emb.clone();
            minus[[r, c]] -= h;
            let (lp, _) = model.loss_grad_at_embeddings(&text, &plus, target).unwrap();
            let (lm, _) = model.loss_grad_at_embeddings(&text, &minus, target).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[[r, c]];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < 1e-3,
                "({r},{c}): analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn masking_a_mask_word_reproduces_the_reference_embedding() {
        let model = stub();
        let text = model.tokenize("fine [MASK] day").unwrap();
        let reference = model.encode(&text).unwrap().sentence_embedding;
        let masked = model.encode_masked(&text, 1).unwrap();
        for (a, b) in reference.iter().zip(masked.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_different_words_gives_distinct_embeddings() {
        let model = stub();
        let text = model.tokenize("good day").unwrap();
        let m0 = model.encode_masked(&text, 0).unwrap();
        let m1 = model.encode_masked(&text, 1).unwrap();
        // Not required to differ in general, but these should not be
        // accidentally identical for a random stub.
        let diff: f64 = m0.iter().zip(m1.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9);
        assert!(matches!(
            model.encode_masked(&text, 2),
            Err(EncoderError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        let model = stub();
        model.save(&path).unwrap();
        let loaded: TransformerClassifier<f64> = TransformerClassifier::load(&path).unwrap();
        assert_eq!(model.param_checksum(), loaded.param_checksum());
        let text = model.tokenize("round trip").unwrap();
        let a = model.encode(&text).unwrap();
        let b = loaded.encode(&text).unwrap();
        for (x, y) in a.logits.iter().zip(b.logits.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn training_learns_a_simple_polarity_task() {
        let mut model: TransformerClassifier<f32> = TransformerClassifier::new(
            TransformerConfig {
                vocab_size: 512,
                dim: 16,
                layers: 1,
                heads: 2,
                ff_dim: 32,
                max_length: 16,
                classes: 2,
                chunk_len: 4,
            },
            3,
            "victim-test",
        );
        let mut data = Vec::new();
        for i in 0..60 {
            let filler = ["it", "was", "very", "quite"][i % 4];
            if i % 2 == 0 {
                data.push((format!("{filler} good nice"), 1));
            } else {
                data.push((format!("{filler} bad awful"), 0));
            }
        }
        let acc = train_classifier(
            &mut model,
            &data,
            ClassifierTrainConfig {
                epochs: 6,
                ..ClassifierTrainConfig::default()
            },
        )
        .unwrap();
        assert!(acc > 0.9, "training accuracy {acc}");
    }
}
