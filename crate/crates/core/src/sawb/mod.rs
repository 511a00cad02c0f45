//! Statistics-aware weight binning.
//!
//! Weights are quantized to `n_bin` symmetric, evenly spaced levels whose
//! outermost value is the scale `α_w`. The MSE-optimal scale is found offline
//! by exhaustive search ([`optimal_alpha_search`]); during training it is
//! approximated in O(n) from the first two absolute moments of the weights,
//! `α̂_w = c1·√E(w²) + c2·E(|w|)`, with `(c1, c2)` fitted per `n_bin` by
//! [`calibrate_coefficients`].

mod calibrate;
mod distributions;
mod search;

pub use calibrate::{
    calibrate_coefficients, calibrate_coefficients_with, calibrate_table, ols_fit,
    CalibrationEntry, CalibrationOptions, CalibrationPoint, CalibrationRow, CalibrationTable,
    LinearFit,
};
pub use distributions::{sample_distribution, Distribution};
pub use search::{optimal_alpha_search, AlphaSearch, DEFAULT_GRID_SIZE};

use crate::error::{QnnError, Result};
use crate::tensor::Tensor;

pub const SUPPORTED_NBINS: [u32; 6] = [2, 3, 4, 8, 16, 32];

pub fn check_nbin(n_bin: u32) -> Result<()> {
    if SUPPORTED_NBINS.contains(&n_bin) {
        Ok(())
    } else {
        Err(QnnError::Parameter(format!(
            "unsupported n_bin {n_bin}; expected one of {SUPPORTED_NBINS:?}"
        )))
    }
}

fn check_scale(alpha_w: f32) -> Result<()> {
    if alpha_w > 0.0 && alpha_w.is_finite() {
        Ok(())
    } else {
        Err(QnnError::Parameter(format!(
            "weight scale must be positive and finite, got {alpha_w}"
        )))
    }
}

/// Sorted quantization levels with extremes `±α_w`.
///
/// Even `n_bin` has no zero level: `±α_w·(2j−1)/(n_bin−1)`. Odd `n_bin`
/// includes zero: `α_w·i/h` for `i ∈ [−h, h]`, `h = (n_bin−1)/2`.
pub fn bin_levels(n_bin: u32, alpha_w: f32) -> Result<Vec<f32>> {
    check_nbin(n_bin)?;
    check_scale(alpha_w)?;
    Ok(levels_unchecked(n_bin, alpha_w))
}

fn positive_levels(n_bin: u32, alpha_w: f32) -> Vec<f32> {
    let n = n_bin as usize;
    if n.is_multiple_of(2) {
        let half = n / 2;
        (1..=half)
            .map(|j| {
                if j == half {
                    alpha_w
                } else {
                    alpha_w * (2 * j - 1) as f32 / (n - 1) as f32
                }
            })
            .collect()
    } else {
        let h = (n - 1) / 2;
        (1..=h)
            .map(|i| {
                if i == h {
                    alpha_w
                } else {
                    alpha_w * i as f32 / h as f32
                }
            })
            .collect()
    }
}

fn levels_unchecked(n_bin: u32, alpha_w: f32) -> Vec<f32> {
    let pos = positive_levels(n_bin, alpha_w);
    let mut levels: Vec<f32> = pos.iter().rev().map(|v| -v).collect();
    if n_bin % 2 == 1 {
        levels.push(0.0);
    }
    levels.extend_from_slice(&pos);
    levels
}

/// Index of the level nearest to `w`; among equidistant levels the one with
/// larger magnitude wins, and at exact symmetric ties the sign of `w`.
fn nearest_level(levels: &[f32], step: f32, offset: f32, w: f32) -> usize {
    let last = levels.len() - 1;
    let guess = ((w + offset) / step).round();
    let guess = if guess.is_nan() {
        0
    } else {
        (guess.max(0.0) as usize).min(last)
    };
    let lo = guess.saturating_sub(1);
    let hi = (guess + 1).min(last);
    let mut best = lo;
    for cand in lo + 1..=hi {
        let d_best = (w - levels[best]).abs();
        let d_cand = (w - levels[cand]).abs();
        let better = d_cand < d_best
            || (d_cand == d_best
                && (levels[cand].abs() > levels[best].abs()
                    || (levels[cand].abs() == levels[best].abs()
                        && (levels[cand] < 0.0) == w.is_sign_negative())));
        if better {
            best = cand;
        }
    }
    best
}

/// Maps each weight to its nearest level in [`bin_levels`].
pub fn quantize_weights(w: &Tensor, alpha_w: f32, n_bin: u32) -> Result<Tensor> {
    let levels = bin_levels(n_bin, alpha_w)?;
    let step = 2.0 * alpha_w / (n_bin - 1) as f32;
    Ok(w.map(|v| levels[nearest_level(&levels, step, alpha_w, v)]))
}

/// Identity straight-through gradient from the quantized to latent weights.
pub fn weight_quant_backward(grad_out: &Tensor) -> Tensor {
    grad_out.clone()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightStats {
    /// `E(|w|)`
    pub e_abs: f32,
    /// `E(w²)`
    pub e_sq: f32,
}

pub fn weight_stats(w: &Tensor) -> Result<WeightStats> {
    if w.is_empty() {
        return Err(QnnError::Input(
            "weight statistics of an empty tensor".into(),
        ));
    }
    let (mut s_abs, mut s_sq) = (0.0f64, 0.0f64);
    for &v in w.data() {
        let v = v as f64;
        s_abs += v.abs();
        s_sq += v * v;
    }
    let n = w.len() as f64;
    Ok(WeightStats {
        e_abs: (s_abs / n) as f32,
        e_sq: (s_sq / n) as f32,
    })
}

/// Sum of squared differences, accumulated in f64.
pub fn quant_se(w: &Tensor, w_q: &Tensor) -> Result<f64> {
    w.ensure_same_shape(w_q, "quant_se")?;
    Ok(w.data()
        .iter()
        .zip(w_q.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum())
}

pub fn quant_mse(w: &Tensor, w_q: &Tensor) -> Result<f32> {
    Ok((quant_se(w, w_q)? / w.len() as f64) as f32)
}

/// `c1·√E(w²) + c2·E(|w|)`.
pub fn estimate_alpha(stats: WeightStats, coeffs: (f32, f32)) -> Result<f32> {
    if stats.e_abs <= 0.0 {
        return Err(QnnError::Degenerate(
            "E(|w|) is zero; all weights are zero".into(),
        ));
    }
    Ok(coeffs.0 * stats.e_sq.sqrt() + coeffs.1 * stats.e_abs)
}

/// Per-layer weight quantizer using calibrated coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SawbQuantizer {
    pub n_bin: u32,
    pub c1: f32,
    pub c2: f32,
}

impl SawbQuantizer {
    pub fn new(n_bin: u32, c1: f32, c2: f32) -> Result<Self> {
        check_nbin(n_bin)?;
        Ok(SawbQuantizer { n_bin, c1, c2 })
    }

    pub fn from_table(table: &CalibrationTable, n_bin: u32) -> Result<Self> {
        let row = table.get(n_bin).ok_or_else(|| {
            QnnError::Calibration(format!("calibration table has no entry for n_bin {n_bin}"))
        })?;
        Self::new(n_bin, row.c1, row.c2)
    }

    /// Estimated scale `α̂_w` for the current weights.
    pub fn scale(&self, w: &Tensor) -> Result<f32> {
        let alpha = estimate_alpha(weight_stats(w)?, (self.c1, self.c2))?;
        if alpha > 0.0 && alpha.is_finite() {
            Ok(alpha)
        } else {
            Err(QnnError::Degenerate(format!(
                "estimated weight scale {alpha} is not positive"
            )))
        }
    }

    /// Quantizes with the estimated scale, falling back to `max|w|` when the
    /// estimate degenerates. All-zero weights stay zero.
    pub fn quantize(&self, w: &Tensor) -> Result<(Tensor, f32)> {
        let alpha = match self.scale(w) {
            Ok(a) => a,
            Err(QnnError::Degenerate(_)) => {
                let m = w.max_abs();
                if m == 0.0 {
                    return Ok((Tensor::zeros(w.shape()), 0.0));
                }
                m
            }
            Err(e) => return Err(e),
        };
        Ok((quantize_weights(w, alpha, self.n_bin)?, alpha))
    }
}
