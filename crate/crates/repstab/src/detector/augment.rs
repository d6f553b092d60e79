//! Feature augmentation ahead of the BiLSTM.
//!
//! Raw `N×2` tensors are z-scored per channel (statistics fitted on the
//! non-zero entries of the training split) and extended with a binary
//! non-zero mask channel and a linear positional channel in `[0, 1]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::num::{cast, Float};
use crate::sensitivity::FeatureTensor;

use super::DetectorError;

/// Per-channel normalization fitted on training data.
///
/// Means and standard deviations come from the non-zero entries only; the
/// normalization is then applied to every entry, zeros included — the mask
/// channel is what records which rows were populated.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub sensitivity_mean: f64,
    pub sensitivity_std: f64,
    pub importance_mean: f64,
    pub importance_std: f64,
    fitted: bool,
}

impl Default for NormalizationStats {
    fn default() -> Self {
        NormalizationStats {
            sensitivity_mean: 0.0,
            sensitivity_std: 1.0,
            importance_mean: 0.0,
            importance_std: 1.0,
            fitted: false,
        }
    }
}

impl NormalizationStats {
    /// Fits on the non-zero entries of each channel across `tensors`.
    /// Standard deviations are floored at 1e-8.
    pub fn fit<F: Float>(tensors: &[FeatureTensor<F>]) -> Self {
        let channel = |col: usize| {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for t in tensors {
                for row in 0..t.n_words() {
                    let v = t.z[[row, col]].to_f64().unwrap();
                    if v != 0.0 {
                        sum += v;
                        count += 1;
                    }
                }
            }
            let mean = if count == 0 { 0.0 } else { sum / count as f64 };
            let mut var_sum = 0.0f64;
            for t in tensors {
                for row in 0..t.n_words() {
                    let v = t.z[[row, col]].to_f64().unwrap();
                    if v != 0.0 {
                        var_sum += (v - mean) * (v - mean);
                    }
                }
            }
            let std = if count == 0 {
                1.0
            } else {
                (var_sum / count as f64).sqrt()
            };
            (mean, std.max(1e-8))
        };
        let (sensitivity_mean, sensitivity_std) = channel(0);
        let (importance_mean, importance_std) = channel(1);
        NormalizationStats {
            sensitivity_mean,
            sensitivity_std,
            importance_mean,
            importance_std,
            fitted: true,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }
}

/// One detector input: `N×4` channels plus the true (pre-padding) length.
///
/// Channels: z-scored sensitivity, z-scored importance, binary non-zero
/// mask, linear position.
#[derive(Debug, Clone)]
pub struct AugmentedInput<F: Float> {
    pub x: Array2<F>,
    pub valid_length: usize,
}

impl<F: Float> AugmentedInput<F> {
    /// True where the raw `(s, α)` row was non-zero.
    pub fn nonzero_mask(&self) -> Vec<bool> {
        (0..self.valid_length)
            .map(|r| self.x[[r, 2]] != F::zero())
            .collect()
    }
}

/// Applies the fitted normalization and appends the mask and positional
/// channels.
pub fn augment<F: Float>(
    tensor: &FeatureTensor<F>,
    stats: &NormalizationStats,
) -> Result<AugmentedInput<F>, DetectorError> {
    if !stats.is_fitted() {
        return Err(DetectorError::StatsNotFitted);
    }
    let n = tensor.n_words();
    let s_mean: F = cast(stats.sensitivity_mean);
    let s_std: F = cast(stats.sensitivity_std);
    let i_mean: F = cast(stats.importance_mean);
    let i_std: F = cast(stats.importance_std);

    let mut x = Array2::zeros((n, 4));
    for row in 0..n {
        let s = tensor.z[[row, 0]];
        let a = tensor.z[[row, 1]];
        x[[row, 0]] = (s - s_mean) / s_std;
        x[[row, 1]] = (a - i_mean) / i_std;
        x[[row, 2]] = if s != F::zero() || a != F::zero() {
            F::one()
        } else {
            F::zero()
        };
        x[[row, 3]] = if n == 1 {
            F::zero()
        } else {
            cast(row as f64 / (n - 1) as f64)
        };
    }
    Ok(AugmentedInput { x, valid_length: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn all_zero_tensor_keeps_the_positional_ramp() {
        let tensor = FeatureTensor {
            z: Array2::<f64>::zeros((3, 2)),
        };
        let stats = NormalizationStats::fit(&[tensor.clone()]);
        let aug = augment(&tensor, &stats).unwrap();
        for r in 0..3 {
            assert_eq!(aug.x[[r, 2]], 0.0);
        }
        assert_eq!(aug.x[[0, 3]], 0.0);
        assert_eq!(aug.x[[1, 3]], 0.5);
        assert_eq!(aug.x[[2, 3]], 1.0);
    }

    #[test]
    fn single_word_position_is_zero() {
        let tensor = FeatureTensor {
            z: array![[0.5f64, 0.2]],
        };
        let stats = NormalizationStats::fit(&[tensor.clone()]);
        let aug = augment(&tensor, &stats).unwrap();
        assert_eq!(aug.x[[0, 3]], 0.0);
        assert_eq!(aug.x[[0, 2]], 1.0);
    }

    /// Hand z-score of a probe value against known non-zero statistics.
    #[test]
    fn z_scores_match_a_scalar_computation() {
        // Non-zero sensitivity entries: 1.0 and 3.0 -> mean 2.0, std 1.0.
        let fit_tensors = vec![FeatureTensor {
            z: array![[1.0f64, 0.0], [3.0, 0.0], [0.0, 0.0]],
        }];
        let stats = NormalizationStats::fit(&fit_tensors);
        assert!((stats.sensitivity_mean - 2.0).abs() < 1e-12);
        assert!((stats.sensitivity_std - 1.0).abs() < 1e-12);

        let probe = FeatureTensor {
            z: array![[5.0f64, 0.0], [0.0, 0.0]],
        };
        let aug = augment(&probe, &stats).unwrap();
        assert!((aug.x[[0, 0]] - (5.0 - 2.0) / 1.0).abs() < 1e-12);
        // Raw zeros are normalized like any other value.
        assert!((aug.x[[1, 0]] - (0.0 - 2.0) / 1.0).abs() < 1e-12);
        // ...but the mask channel records the empty row.
        assert_eq!(aug.x[[1, 2]], 0.0);
    }

    #[test]
    fn unfitted_stats_are_rejected() {
        let tensor = FeatureTensor {
            z: Array2::<f64>::zeros((2, 2)),
        };
        let stats = NormalizationStats::default();
        assert!(matches!(
            augment(&tensor, &stats),
            Err(DetectorError::StatsNotFitted)
        ));
    }

    #[test]
    fn std_is_floored_for_constant_channels() {
        let tensors = vec![FeatureTensor {
            z: array![[0.7f64, 0.7], [0.7, 0.7]],
        }];
        let stats = NormalizationStats::fit(&tensors);
        assert_eq!(stats.sensitivity_std, 1e-8);
        assert_eq!(stats.importance_std, 1e-8);
    }
}
