//! AdamW with decoupled weight decay.

use ndarray::Array2;

use crate::num::{cast, Float};
use crate::params::ParamSet;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state aligned with a [`ParamSet`]'s tensor order.
pub struct AdamW<F: Float> {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<F>) -> Self {
        let m = params
            .values()
            .iter()
            .map(|p| Array2::zeros(p.raw_dim()))
            .collect();
        let v = params
            .values()
            .iter()
            .map(|p| Array2::zeros(p.raw_dim()))
            .collect();
        AdamW { cfg, step: 0, m, v }
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    /// One update; `grads` must align with the parameter set.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Array2<F>]) {
        assert_eq!(grads.len(), params.len(), "gradient/parameter mismatch");
        self.step += 1;
        let lr: F = cast(self.cfg.lr);
        let b1: F = cast(self.cfg.beta1);
        let b2: F = cast(self.cfg.beta2);
        let eps: F = cast(self.cfg.eps);
        let wd: F = cast(self.cfg.weight_decay);
        let one = F::one();
        let bias1 = one - b1.powi(self.step as i32);
        let bias2 = one - b2.powi(self.step as i32);

        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p = *p - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * *p;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    /// Minimizing (x - 3)^2 should walk x toward 3.
    #[test]
    fn adamw_descends_a_quadratic() {
        let mut params: ParamSet<f64> = ParamSet::new();
        let id = params.add("x", Array2::from_elem((1, 1), 0.0));
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            &params,
        );
        for _ in 0..400 {
            let tape = Tape::new();
            let vars = params.load(&tape);
            let x = vars.var(id);
            let target = tape.input(Array2::from_elem((1, 1), 3.0));
            let diff = tape.sub(x, target);
            let sq = tape.mul(diff, diff);
            let loss = tape.sum_all(sq);
            let grads = tape.backward(loss);
            let g = params.collect_grads(&vars, &grads);
            opt.step(&mut params, &g);
        }
        let x = params.get(id)[[0, 0]];
        assert!((x - 3.0).abs() < 1e-2, "x = {x}");
    }

    /// Decoupled decay shrinks weights even with zero gradients.
    #[test]
    fn weight_decay_is_decoupled() {
        let mut params: ParamSet<f64> = ParamSet::new();
        let id = params.add("w", Array2::from_elem((1, 1), 1.0));
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.5,
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            &params,
        );
        let zero = vec![Array2::zeros((1, 1))];
        opt.step(&mut params, &zero);
        let w = params.get(id)[[0, 0]];
        assert!((w - (1.0 - 0.5 * 0.1)).abs() < 1e-12);
    }
}
