use std::fmt::Write as _;

use crate::error::{QnnError, Result};
use crate::pact::{pact_forward, pact_quantize};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorCurvePoint {
    pub alpha: f32,
    /// `mean(max(x − α, 0)²)`.
    pub clip_mse: f32,
    /// `mean((clip(x, 0, α) − q_k(clip(x, 0, α)))²)`.
    pub quant_mse: f32,
}

pub const ERROR_CURVES_HEADER: &str = "alpha,clip_mse,quant_mse";

/// Clipping and quantization error of a `k`-bit clipping activation at each
/// `α`. Both means are over all samples.
pub fn error_curves(x: &Tensor, alpha_grid: &[f32], k: u32) -> Result<Vec<ErrorCurvePoint>> {
    if x.is_empty() {
        return Err(QnnError::Input("error curves need samples".into()));
    }
    if alpha_grid.is_empty()
        || alpha_grid.iter().any(|&a| !(a > 0.0 && a.is_finite()))
        || alpha_grid.windows(2).any(|p| p[0] >= p[1])
    {
        return Err(QnnError::Parameter(
            "alpha grid must be non-empty, positive and strictly ascending".into(),
        ));
    }
    let n = x.len() as f64;
    alpha_grid
        .iter()
        .map(|&alpha| {
            let clipped = pact_forward(x, alpha)?;
            let q = pact_quantize(&clipped, alpha, k);
            let clip: f64 = x
                .data()
                .iter()
                .map(|&v| {
                    let e = (v - alpha).max(0.0) as f64;
                    e * e
                })
                .sum();
            let quant: f64 = clipped
                .data()
                .iter()
                .zip(q.data())
                .map(|(&c, &qv)| {
                    let e = (c - qv) as f64;
                    e * e
                })
                .sum();
            Ok(ErrorCurvePoint {
                alpha,
                clip_mse: (clip / n) as f32,
                quant_mse: (quant / n) as f32,
            })
        })
        .collect()
}

pub fn write_error_curves_csv(points: &[ErrorCurvePoint]) -> String {
    let mut s = String::from(ERROR_CURVES_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.alpha, p.clip_mse, p.quant_mse);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_clipping_above_max() {
        let x = Tensor::from_slice(&[0.1, 0.5, 1.5, -2.0]);
        let pts = error_curves(&x, &[2.0, 4.0], 2).unwrap();
        assert!(pts.iter().all(|p| p.clip_mse == 0.0));
        assert!(error_curves(&x, &[2.0, 1.0], 2).is_err());
    }

    #[test]
    fn quant_error_scales_quadratically() {
        // Samples at a fixed fraction of α keep the same relative rounding error.
        let base = [0.1f32, 0.2, 0.45, 0.7];
        let mut last: Option<f32> = None;
        for alpha in [1.0f32, 2.0, 4.0] {
            let x = Tensor::from_slice(&base.map(|v| v * alpha));
            let p = error_curves(&x, &[alpha], 2).unwrap()[0];
            if let Some(prev) = last {
                let ratio = p.quant_mse / prev;
                assert!((ratio - 4.0).abs() < 1e-3, "{ratio}");
            }
            last = Some(p.quant_mse);
        }
    }
}
