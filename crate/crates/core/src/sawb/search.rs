use super::{check_nbin, positive_levels};
use crate::error::{QnnError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GRID_SIZE: usize = 2000;

/// Result of the exhaustive scale search.
#[derive(Clone, Debug)]
pub struct AlphaSearch {
    pub alpha_star: f32,
    pub mse_star: f32,
    /// True when the weights are all zero; `alpha_star` is then 0.
    pub degenerate: bool,
    /// `(α, mse)` at every grid point, ascending in `α`.
    pub sweep: Vec<(f32, f32)>,
}

/// Exhaustive search for the MSE-minimizing scale over the uniform grid
/// `max|w|·i/grid_size`, `i = 1..=grid_size`.
///
/// The error is symmetric in the sign of each weight, so magnitudes are sorted
/// once and every candidate scale is scored from prefix sums of `|w|` and
/// `w²`: a bin holding magnitudes `a` with level `L` contributes
/// `Σa² − 2L·Σa + L²·count`.
pub fn optimal_alpha_search(w: &Tensor, n_bin: u32, grid_size: usize) -> Result<AlphaSearch> {
    check_nbin(n_bin)?;
    if w.is_empty() {
        return Err(QnnError::Input(
            "optimal scale search on empty weights".into(),
        ));
    }
    if grid_size < 2 {
        return Err(QnnError::Parameter(format!(
            "grid size must be at least 2, got {grid_size}"
        )));
    }
    let max_abs = w.max_abs();
    if max_abs == 0.0 {
        return Ok(AlphaSearch {
            alpha_star: 0.0,
            mse_star: 0.0,
            degenerate: true,
            sweep: Vec::new(),
        });
    }

    let mut mags: Vec<f64> = w.data().iter().map(|v| v.abs() as f64).collect();
    mags.sort_by(f64::total_cmp);
    let mut s1 = Vec::with_capacity(mags.len() + 1);
    let mut s2 = Vec::with_capacity(mags.len() + 1);
    let (mut a1, mut a2) = (0.0f64, 0.0f64);
    s1.push(0.0);
    s2.push(0.0);
    for &m in &mags {
        a1 += m;
        a2 += m * m;
        s1.push(a1);
        s2.push(a2);
    }
    let n = mags.len() as f64;

    let mut sweep = Vec::with_capacity(grid_size);
    let mut best = (f32::INFINITY, 0.0f32);
    for i in 1..=grid_size {
        let alpha = max_abs * i as f32 / grid_size as f32;
        let mse = (magnitude_se(&mags, &s1, &s2, n_bin, alpha) / n) as f32;
        if mse < best.0 {
            best = (mse, alpha);
        }
        sweep.push((alpha, mse));
    }
    Ok(AlphaSearch {
        alpha_star: best.1,
        mse_star: best.0,
        degenerate: false,
        sweep,
    })
}

fn magnitude_se(mags: &[f64], s1: &[f64], s2: &[f64], n_bin: u32, alpha: f32) -> f64 {
    // Non-negative levels in ascending order; the nearest level to a
    // magnitude is always on the non-negative side.
    let mut levels: Vec<f64> = Vec::with_capacity(n_bin as usize / 2 + 1);
    if n_bin % 2 == 1 {
        levels.push(0.0);
    }
    levels.extend(positive_levels(n_bin, alpha).iter().map(|&v| v as f64));

    let mut se = 0.0;
    let mut start = 0usize;
    for (j, &level) in levels.iter().enumerate() {
        let end = match levels.get(j + 1) {
            // ties at the midpoint go to the larger level
            Some(&next) => {
                let mid = 0.5 * (level + next);
                start + mags[start..].partition_point(|&m| m < mid)
            }
            None => mags.len(),
        };
        let cnt = (end - start) as f64;
        let sum = s1[end] - s1[start];
        let sum_sq = s2[end] - s2[start];
        se += (sum_sq - 2.0 * level * sum + level * level * cnt).max(0.0);
        start = end;
    }
    se
}

#[cfg(test)]
mod tests {
    use super::super::{quant_mse, quantize_weights};
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn exactly_representable_pair() {
        let w = Tensor::from_slice(&[-0.75, 0.75, 0.75, -0.75]);
        let s = optimal_alpha_search(&w, 2, 100).unwrap();
        assert_eq!(s.alpha_star, 0.75);
        assert_eq!(s.mse_star, 0.0);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let s = optimal_alpha_search(&Tensor::zeros(&[10]), 4, 50).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.alpha_star, 0.0);
        assert_eq!(s.mse_star, 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let w = Tensor::from_slice(&[1.0]);
        assert!(optimal_alpha_search(&w, 4, 1).is_err());
        assert!(optimal_alpha_search(&w, 6, 10).is_err());
    }

    #[test]
    fn prefix_route_matches_direct_quantization() {
        let mut rng = Rng::new(11, 0);
        let data: Vec<f32> = (0..3000).map(|_| rng.normal() as f32).collect();
        let w = Tensor::from_slice(&data);
        for n_bin in [2, 3, 4, 8, 16, 32] {
            let s = optimal_alpha_search(&w, n_bin, 64).unwrap();
            for &(alpha, mse) in s.sweep.iter().step_by(7) {
                let direct = quant_mse(&w, &quantize_weights(&w, alpha, n_bin).unwrap()).unwrap();
                assert!(
                    (direct - mse).abs() <= 1e-5 * direct.max(1e-3),
                    "n_bin={n_bin} alpha={alpha}: {direct} vs {mse}"
                );
            }
            assert!(s.sweep.iter().all(|&(_, m)| s.mse_star <= m));
        }
    }
}
