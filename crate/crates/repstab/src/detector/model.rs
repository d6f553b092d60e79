//! The BiLSTM trace classifier.
//!
//! Input projection (linear → layer norm → GELU), a 2-layer bidirectional
//! LSTM with 64 hidden units per direction and dropout 0.3 between layers,
//! three pooling paths over the output sequence (masked max, masked
//! 2-head attention, masked average), and a two-layer classification head
//! over their concatenation.
//!
//! Padding is handled with state-holding updates: at padded steps the
//! recurrent state is carried through unchanged and the step's output is
//! zeroed, which makes logits independent of how much padding a batch
//! adds. The attention pooling query is a learned vector realized as the
//! query-projection bias (the query input is a zero vector), so the layer
//! keeps the exact parameter budget of a standard in/out-projection
//! attention block.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::autodiff::{Tape, Var};
use crate::num::{cast, Float};
use crate::params::{uniform_init, ParamId, ParamSet, ParamVars};

use super::augment::AugmentedInput;
use super::DetectorError;

/// Additive mask value that removes a position from softmax/max pooling.
const NEG_FILL: f64 = -1e30;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    pub input_channels: usize,
    /// LSTM hidden size per direction; also the projection width.
    pub hidden: usize,
    pub attn_heads: usize,
    /// Classification-head hidden width.
    pub head_hidden: usize,
    pub classes: usize,
    /// Dropout rate between LSTM layers and inside the head.
    pub dropout: f64,
    /// When set, construction fails unless the parameter count matches.
    pub expected_params: Option<usize>,
}

impl DetectorConfig {
    /// The reference configuration: 257,154 parameters exactly.
    pub fn paper() -> Self {
        DetectorConfig {
            input_channels: 4,
            hidden: 64,
            attn_heads: 2,
            head_hidden: 64,
            classes: 2,
            dropout: 0.3,
            expected_params: Some(257_154),
        }
    }

    /// Narrow double-precision-friendly variant for gradient checks.
    pub fn gradcheck() -> Self {
        DetectorConfig {
            input_channels: 4,
            hidden: 8,
            attn_heads: 2,
            head_hidden: 8,
            classes: 2,
            dropout: 0.3,
            expected_params: None,
        }
    }
}

struct LstmDirIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

struct Ids {
    proj_w: ParamId,
    proj_b: ParamId,
    proj_ln_g: ParamId,
    proj_ln_b: ParamId,
    /// `[layer][direction]`, direction 0 forward / 1 backward.
    lstm: Vec<[LstmDirIds; 2]>,
    attn_in_w: ParamId,
    attn_in_b: ParamId,
    attn_out_w: ParamId,
    attn_out_b: ParamId,
    head1_w: ParamId,
    head1_b: ParamId,
    head2_w: ParamId,
    head2_b: ParamId,
}

/// Trained (or trainable) trace classifier.
pub struct DetectorModel<F: Float> {
    cfg: DetectorConfig,
    params: ParamSet<F>,
    ids: Ids,
}

impl<F: Float> DetectorModel<F> {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self, DetectorError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = cfg.hidden;
        let e = 2 * h; // BiLSTM output width
        let c = cfg.input_channels;

        let proj_bound = 1.0 / (c as f64).sqrt();
        let proj_w = params.add("proj.w", uniform_init(&mut rng, c, h, proj_bound));
        let proj_b = params.add("proj.b", uniform_init(&mut rng, 1, h, proj_bound));
        let proj_ln_g = params.add("proj.ln_g", Array2::ones((1, h)));
        let proj_ln_b = params.add("proj.ln_b", Array2::zeros((1, h)));

        let lstm_bound = 1.0 / (h as f64).sqrt();
        let mut lstm = Vec::new();
        for layer in 0..2 {
            let input = if layer == 0 { h } else { e };
            let mut dirs = Vec::new();
            for dir in ["fwd", "bwd"] {
                let p = |s: &str| format!("lstm{layer}.{dir}.{s}");
                dirs.push(LstmDirIds {
                    w_ih: params.add(p("w_ih"), uniform_init(&mut rng, input, 4 * h, lstm_bound)),
                    w_hh: params.add(p("w_hh"), uniform_init(&mut rng, h, 4 * h, lstm_bound)),
                    b_ih: params.add(p("b_ih"), uniform_init(&mut rng, 1, 4 * h, lstm_bound)),
                    b_hh: params.add(p("b_hh"), uniform_init(&mut rng, 1, 4 * h, lstm_bound)),
                });
            }
            let [fwd, bwd]: [LstmDirIds; 2] = dirs.try_into().ok().unwrap();
            lstm.push([fwd, bwd]);
        }

        let attn_bound = 1.0 / (e as f64).sqrt();
        let attn_in_w = params.add("attn.in_w", uniform_init(&mut rng, e, 3 * e, attn_bound));
        let attn_in_b = params.add("attn.in_b", Array2::zeros((1, 3 * e)));
        let attn_out_w = params.add("attn.out_w", uniform_init(&mut rng, e, e, attn_bound));
        let attn_out_b = params.add("attn.out_b", Array2::zeros((1, e)));

        let concat = 3 * e;
        let head1_bound = 1.0 / (concat as f64).sqrt();
        let head2_bound = 1.0 / (cfg.head_hidden as f64).sqrt();
        let head1_w = params.add("head.fc1_w", uniform_init(&mut rng, concat, cfg.head_hidden, head1_bound));
        let head1_b = params.add("head.fc1_b", uniform_init(&mut rng, 1, cfg.head_hidden, head1_bound));
        let head2_w = params.add("head.fc2_w", uniform_init(&mut rng, cfg.head_hidden, cfg.classes, head2_bound));
        let head2_b = params.add("head.fc2_b", uniform_init(&mut rng, 1, cfg.classes, head2_bound));

        let model = DetectorModel {
            cfg,
            params,
            ids: Ids {
                proj_w,
                proj_b,
                proj_ln_g,
                proj_ln_b,
                lstm,
                attn_in_w,
                attn_in_b,
                attn_out_w,
                attn_out_b,
                head1_w,
                head1_b,
                head2_w,
                head2_b,
            },
        };
        if let Some(expected) = cfg.expected_params {
            let actual = model.param_count();
            if actual != expected {
                return Err(DetectorError::ParamCountMismatch { expected, actual });
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> DetectorConfig {
        self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    /// Mutable parameter access for optimizers and gradient checks.
    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    /// Eval-mode logits (`B×classes`), dropout disabled.
    pub fn forward(&self, inputs: &[AugmentedInput<F>]) -> Result<Array2<F>, DetectorError> {
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let logits = self.forward_on_tape(&tape, &vars, inputs, None)?;
        Ok(tape.value(logits))
    }

    /// Mean cross-entropy over the batch plus gradients for every
    /// parameter. Dropout is active only when an RNG is supplied.
    pub fn loss_and_grads(
        &self,
        inputs: &[AugmentedInput<F>],
        targets: &[usize],
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(F, Vec<Array2<F>>), DetectorError> {
        assert_eq!(inputs.len(), targets.len());
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let logits = self.forward_on_tape(&tape, &vars, inputs, dropout_rng)?;
        let loss = tape.cross_entropy_mean(logits, targets);
        let loss_value = tape.value(loss)[[0, 0]];
        if !loss_value.is_finite() {
            return Err(DetectorError::NonFiniteLoss);
        }
        let grads = tape.backward(loss);
        Ok((loss_value, self.params.collect_grads(&vars, &grads)))
    }

    /// Eval-mode mean cross-entropy (no dropout, no gradients).
    pub fn loss(&self, inputs: &[AugmentedInput<F>], targets: &[usize]) -> Result<F, DetectorError> {
        assert_eq!(inputs.len(), targets.len());
        let tape = Tape::new();
        let vars = self.params.load(&tape);
        let logits = self.forward_on_tape(&tape, &vars, inputs, None)?;
        let loss = tape.cross_entropy_mean(logits, targets);
        Ok(tape.value(loss)[[0, 0]])
    }

    fn forward_on_tape(
        &self,
        tape: &Tape<F>,
        vars: &ParamVars,
        inputs: &[AugmentedInput<F>],
        mut dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Var, DetectorError> {
        if inputs.is_empty() {
            return Err(DetectorError::EmptyBatch);
        }
        let b = inputs.len();
        let n_max = inputs.iter().map(|i| i.valid_length).max().unwrap();
        let h = self.cfg.hidden;
        let e = 2 * h;
        let eps: F = cast(1e-5);
        let neg: F = cast(NEG_FILL);

        // Time-major constant inputs and masks.
        let mut steps = Vec::with_capacity(n_max);
        let mut valid_cols = Vec::with_capacity(n_max);
        let mut hold_cols = Vec::with_capacity(n_max);
        let mut max_fill_cols = Vec::with_capacity(n_max);
        let mut avg_weight_cols = Vec::with_capacity(n_max);
        for t in 0..n_max {
            let mut x_t = Array2::zeros((b, self.cfg.input_channels));
            let mut valid = Array2::zeros((b, 1));
            let mut hold = Array2::zeros((b, 1));
            let mut fill = Array2::zeros((b, 1));
            let mut avg_w = Array2::zeros((b, 1));
            for (s, input) in inputs.iter().enumerate() {
                if t < input.valid_length {
                    for c in 0..self.cfg.input_channels {
                        x_t[[s, c]] = input.x[[t, c]];
                    }
                    valid[[s, 0]] = F::one();
                    avg_w[[s, 0]] = cast(1.0 / input.valid_length as f64);
                } else {
                    hold[[s, 0]] = F::one();
                    fill[[s, 0]] = neg;
                }
            }
            steps.push(tape.input(x_t));
            valid_cols.push(tape.input(valid));
            hold_cols.push(tape.input(hold));
            max_fill_cols.push(tape.input(fill));
            avg_weight_cols.push(tape.input(avg_w));
        }

        // Attention pooling mask: valid positions with a non-zero raw row;
        // samples with no such position fall back to all valid positions.
        let mut attn_mask = Array2::from_elem((b, n_max), neg);
        for (s, input) in inputs.iter().enumerate() {
            let nonzero = input.nonzero_mask();
            let any_nonzero = nonzero.iter().any(|&m| m);
            for t in 0..input.valid_length {
                if !any_nonzero || nonzero[t] {
                    attn_mask[[s, t]] = F::zero();
                }
            }
        }
        let attn_mask = tape.input(attn_mask);

        // Input projection: linear -> layer norm -> GELU, per step.
        let mut seq: Vec<Var> = steps
            .iter()
            .map(|&x_t| {
                let lin = tape.add_row(tape.matmul(x_t, vars.var(self.ids.proj_w)), vars.var(self.ids.proj_b));
                let ln = tape.layer_norm_rows(
                    lin,
                    vars.var(self.ids.proj_ln_g),
                    vars.var(self.ids.proj_ln_b),
                    eps,
                );
                tape.gelu(ln)
            })
            .collect();

        // Two BiLSTM layers with dropout between them.
        for (layer_idx, dirs) in self.ids.lstm.iter().enumerate() {
            let zero_state = tape.input(Array2::zeros((b, h)));
            let mut dir_outputs: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
            for (d, ids) in dirs.iter().enumerate() {
                let order: Vec<usize> = if d == 0 {
                    (0..n_max).collect()
                } else {
                    (0..n_max).rev().collect()
                };
                let mut h_prev = zero_state;
                let mut c_prev = zero_state;
                let mut outputs = vec![zero_state; n_max];
                for &t in &order {
                    let gates_x = tape.add_row(
                        tape.matmul(seq[t], vars.var(ids.w_ih)),
                        vars.var(ids.b_ih),
                    );
                    let gates_h = tape.add_row(
                        tape.matmul(h_prev, vars.var(ids.w_hh)),
                        vars.var(ids.b_hh),
                    );
                    let gates = tape.add(gates_x, gates_h);
                    let i_gate = tape.sigmoid(tape.slice_cols(gates, 0, h));
                    let f_gate = tape.sigmoid(tape.slice_cols(gates, h, 2 * h));
                    let g_gate = tape.tanh(tape.slice_cols(gates, 2 * h, 3 * h));
                    let o_gate = tape.sigmoid(tape.slice_cols(gates, 3 * h, 4 * h));
                    let c_new = tape.add(tape.mul(f_gate, c_prev), tape.mul(i_gate, g_gate));
                    let h_new = tape.mul(o_gate, tape.tanh(c_new));
                    // Hold state through padded steps, zero their outputs.
                    let c_t = tape.add(
                        tape.mul_col(c_new, valid_cols[t]),
                        tape.mul_col(c_prev, hold_cols[t]),
                    );
                    let h_t = tape.add(
                        tape.mul_col(h_new, valid_cols[t]),
                        tape.mul_col(h_prev, hold_cols[t]),
                    );
                    outputs[t] = tape.mul_col(h_t, valid_cols[t]);
                    h_prev = h_t;
                    c_prev = c_t;
                }
                dir_outputs[d] = outputs;
            }
            seq = (0..n_max)
                .map(|t| tape.concat_cols(&[dir_outputs[0][t], dir_outputs[1][t]]))
                .collect();
            if layer_idx == 0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - self.cfg.dropout;
                    seq = seq
                        .iter()
                        .map(|&s_t| {
                            let mask = Array2::from_shape_fn((b, e), |_| {
                                if rng.gen::<f64>() < keep {
                                    cast(1.0 / keep)
                                } else {
                                    F::zero()
                                }
                            });
                            let mask = tape.input(mask);
                            tape.mul(s_t, mask)
                        })
                        .collect();
                }
            }
        }

        // Max pooling over valid positions.
        let mut max_pool = tape.add_col(seq[0], max_fill_cols[0]);
        for t in 1..n_max {
            let masked = tape.add_col(seq[t], max_fill_cols[t]);
            max_pool = tape.maximum(max_pool, masked);
        }

        // Masked average pooling.
        let mut avg_pool = tape.mul_col(seq[0], avg_weight_cols[0]);
        for t in 1..n_max {
            avg_pool = tape.add(avg_pool, tape.mul_col(seq[t], avg_weight_cols[t]));
        }

        // 2-head attention pooling. The query is the query-projection
        // bias (zero query input); keys/values are per-step projections.
        let heads = self.cfg.attn_heads;
        let dh = e / heads;
        let scale: F = cast(1.0 / (dh as f64).sqrt());
        let zero_q = tape.input(Array2::zeros((b, e)));
        let q_full = tape.slice_cols(
            tape.add_row(tape.matmul(zero_q, vars.var(self.ids.attn_in_w)), vars.var(self.ids.attn_in_b)),
            0,
            e,
        );
        let kv: Vec<Var> = seq
            .iter()
            .map(|&s_t| {
                tape.add_row(tape.matmul(s_t, vars.var(self.ids.attn_in_w)), vars.var(self.ids.attn_in_b))
            })
            .collect();
        let mut head_ctx = Vec::with_capacity(heads);
        for head in 0..heads {
            let q_h = tape.slice_cols(q_full, head * dh, (head + 1) * dh);
            let score_cols: Vec<Var> = kv
                .iter()
                .map(|&kv_t| {
                    let k_h = tape.slice_cols(kv_t, e + head * dh, e + (head + 1) * dh);
                    tape.scale(tape.row_sums(tape.mul(q_h, k_h)), scale)
                })
                .collect();
            let scores = tape.concat_cols(&score_cols);
            let weights = tape.softmax_rows(tape.add(scores, attn_mask));
            let mut ctx = None;
            for (t, &kv_t) in kv.iter().enumerate() {
                let v_h = tape.slice_cols(kv_t, 2 * e + head * dh, 2 * e + (head + 1) * dh);
                let w_t = tape.slice_cols(weights, t, t + 1);
                let contrib = tape.mul_col(v_h, w_t);
                ctx = Some(match ctx {
                    None => contrib,
                    Some(acc) => tape.add(acc, contrib),
                });
            }
            head_ctx.push(ctx.unwrap());
        }
        let attn_ctx = tape.concat_cols(&head_ctx);
        let attn_pool = tape.add_row(
            tape.matmul(attn_ctx, vars.var(self.ids.attn_out_w)),
            vars.var(self.ids.attn_out_b),
        );

        // Head over [max ‖ attention ‖ average].
        let pooled = tape.concat_cols(&[max_pool, attn_pool, avg_pool]);
        let mut hidden = tape.gelu(tape.add_row(
            tape.matmul(pooled, vars.var(self.ids.head1_w)),
            vars.var(self.ids.head1_b),
        ));
        if let Some(rng) = dropout_rng.as_deref_mut() {
            let keep = 1.0 - self.cfg.dropout;
            let mask = Array2::from_shape_fn((b, self.cfg.head_hidden), |_| {
                if rng.gen::<f64>() < keep {
                    cast(1.0 / keep)
                } else {
                    F::zero()
                }
            });
            let mask = tape.input(mask);
            hidden = tape.mul(hidden, mask);
        }
        let logits = tape.add_row(
            tape.matmul(hidden, vars.var(self.ids.head2_w)),
            vars.var(self.ids.head2_b),
        );
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input_of(rows: Vec<[f64; 4]>) -> AugmentedInput<f64> {
        let n = rows.len();
        let mut x = Array2::zeros((n, 4));
        for (r, row) in rows.iter().enumerate() {
            for c in 0..4 {
                x[[r, c]] = row[c];
            }
        }
        AugmentedInput { x, valid_length: n }
    }

    fn sample(seed: u64, n: usize) -> AugmentedInput<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    if i % 2 == 0 { 1.0 } else { 0.0 },
                    i as f64 / (n.max(2) - 1) as f64,
                ]
            })
            .collect();
        input_of(rows)
    }

    #[test]
    fn paper_config_has_the_exact_parameter_count() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::paper(), 0).unwrap();
        assert_eq!(model.param_count(), 257_154);
    }

    #[test]
    fn wrong_expected_count_fails_construction() {
        let cfg = DetectorConfig {
            expected_params: Some(257_155),
            ..DetectorConfig::paper()
        };
        assert!(matches!(
            DetectorModel::<f64>::new(cfg, 0),
            Err(DetectorError::ParamCountMismatch { .. })
        ));
    }

    #[test]
    fn forward_handles_any_length_and_rejects_empty_batches() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 1).unwrap();
        for n in [1usize, 2, 7] {
            let logits = model.forward(&[sample(n as u64, n)]).unwrap();
            assert_eq!(logits.dim(), (1, 2));
            assert!(logits.iter().all(|v| v.is_finite()));
        }
        assert!(matches!(
            model.forward(&[]),
            Err(DetectorError::EmptyBatch)
        ));
    }

    #[test]
    fn duplicated_samples_produce_identical_logit_rows() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 2).unwrap();
        let a = sample(10, 5);
        let b = sample(11, 3);
        let logits = model.forward(&[a.clone(), b, a.clone()]).unwrap();
        for c in 0..2 {
            assert_eq!(logits[[0, c]].to_bits(), logits[[2, c]].to_bits());
        }
    }

    #[test]
    fn padding_rows_do_not_change_logits() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 3).unwrap();
        let short = sample(20, 4);
        let long = sample(21, 9); // forces 5 rows of padding onto `short`
        let alone = model.forward(&[short.clone()]).unwrap();
        let padded = model.forward(&[short, long]).unwrap();
        for c in 0..2 {
            assert!(
                (alone[[0, c]] - padded[[0, c]]).abs() < 1e-5,
                "{} vs {}",
                alone[[0, c]],
                padded[[0, c]]
            );
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 4).unwrap();
        let x = sample(30, 6);
        let a = model.forward(&[x.clone()]).unwrap();
        let b = model.forward(&[x]).unwrap();
        for c in 0..2 {
            assert_eq!(a[[0, c]].to_bits(), b[[0, c]].to_bits());
        }
    }

    #[test]
    fn all_zero_rows_fall_back_to_valid_position_attention() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 5).unwrap();
        let zeros = input_of(vec![[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);
        let logits = model.forward(&[zeros]).unwrap();
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn row_shuffling_keeps_shape_without_crashing() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 6).unwrap();
        let x = sample(40, 6);
        let mut shuffled = x.clone();
        let top = shuffled.x.row(0).to_owned();
        let bottom = shuffled.x.row(5).to_owned();
        shuffled.x.row_mut(0).assign(&bottom);
        shuffled.x.row_mut(5).assign(&top);
        let a = model.forward(&[x]).unwrap();
        let b = model.forward(&[shuffled]).unwrap();
        assert_eq!(a.dim(), b.dim());
    }

    /// Analytic parameter gradients vs central differences on the narrow
    /// double-precision variant.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut model: DetectorModel<f64> =
            DetectorModel::new(DetectorConfig::gradcheck(), 7).unwrap();
        let inputs = vec![sample(50, 5), sample(51, 3)];
        let targets = vec![0usize, 1usize];
        let (_, grads) = model.loss_and_grads(&inputs, &targets, None).unwrap();

        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 24 {
            let pid = rng.gen_range(0..model.params().len());
            let value = model.params().values()[pid].clone();
            let r = rng.gen_range(0..value.nrows());
            let c = rng.gen_range(0..value.ncols());

            model.params_mut().values_mut()[pid][[r, c]] += h;
            let up = model.loss(&inputs, &targets).unwrap();
            model.params_mut().values_mut()[pid][[r, c]] -= 2.0 * h;
            let down = model.loss(&inputs, &targets).unwrap();
            model.params_mut().values_mut()[pid][[r, c]] += h;

            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[pid][[r, c]];
            let denom = analytic.abs().max(numeric.abs());
            if denom < 1e-10 {
                continue; // both effectively zero (e.g. the inert query block)
            }
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "param {pid} ({r},{c}): analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }

    #[test]
    fn logits_respond_to_input_differences() {
        let model: DetectorModel<f64> = DetectorModel::new(DetectorConfig::gradcheck(), 8).unwrap();
        let a = input_of(vec![[3.0, 3.0, 1.0, 0.0], [0.1, 0.0, 1.0, 1.0]]);
        let b = input_of(vec![[-3.0, -1.0, 1.0, 0.0], [0.2, 0.1, 1.0, 1.0]]);
        let la = model.forward(&[a]).unwrap();
        let lb = model.forward(&[b]).unwrap();
        let diff = (la[[0, 0]] - lb[[0, 0]]).abs() + (la[[0, 1]] - lb[[0, 1]]).abs();
        assert!(diff > 1e-8);
    }
}
