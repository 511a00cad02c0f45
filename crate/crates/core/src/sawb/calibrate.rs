use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::distributions::{sample_distribution, Distribution};
use super::search::{optimal_alpha_search, DEFAULT_GRID_SIZE};
use super::{check_nbin, weight_stats, SUPPORTED_NBINS};
use crate::error::{QnnError, Result};
use crate::rng::Rng;

pub const MIN_CALIBRATION_SAMPLES: usize = 10_000;
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 100_000;
pub const DISTRIBUTION_SET_ID: &str = "six-reference-v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_max: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(QnnError::Calibration(format!(
            "regression needs at least two paired points, got {} x and {} y",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        return Err(QnnError::Calibration(
            "singular regression: all moment ratios are equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut residual_max = 0.0f64;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
        residual_max = residual_max.max(r.abs());
    }
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        residual_max,
        r_squared,
    })
}

/// One distribution's contribution to a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationPoint {
    pub distribution: Distribution,
    pub e_abs: f64,
    pub e_sq: f64,
    pub alpha_star: f64,
    /// `√E(w²) / E(|w|)`
    pub moment_ratio: f64,
    /// `α* / E(|w|)`
    pub scale_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationEntry {
    pub row: CalibrationRow,
    pub points: Vec<CalibrationPoint>,
}

#[derive(Clone, Debug)]
pub struct CalibrationOptions {
    pub n_samples: usize,
    pub grid_size: usize,
    /// Independent sample sets per distribution. 1 gives exactly six points.
    pub draws_per_distribution: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            n_samples: DEFAULT_CALIBRATION_SAMPLES,
            grid_size: DEFAULT_GRID_SIZE,
            draws_per_distribution: 1,
        }
    }
}

/// Six-point calibration with default grid.
pub fn calibrate_coefficients(n_bin: u32, n_samples: usize, rng: &Rng) -> Result<CalibrationEntry> {
    calibrate_coefficients_with(
        n_bin,
        &CalibrationOptions {
            n_samples,
            ..CalibrationOptions::default()
        },
        rng,
    )
}

/// Fits `α*/E|w| = c1·(√E(w²)/E|w|) + c2` over the reference distributions.
///
/// Draw `d` of distribution `i` uses stream `rng.fork(i).fork(d)`, so the
/// samples are identical across `n_bin` values for one seed.
pub fn calibrate_coefficients_with(
    n_bin: u32,
    opts: &CalibrationOptions,
    rng: &Rng,
) -> Result<CalibrationEntry> {
    check_nbin(n_bin)?;
    if opts.n_samples < MIN_CALIBRATION_SAMPLES {
        return Err(QnnError::Parameter(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
            opts.n_samples
        )));
    }
    if opts.draws_per_distribution == 0 {
        return Err(QnnError::Parameter(
            "draws_per_distribution must be ≥ 1".into(),
        ));
    }
    let mut points = Vec::with_capacity(Distribution::ALL.len() * opts.draws_per_distribution);
    for dist in Distribution::ALL {
        for draw in 0..opts.draws_per_distribution {
            let mut stream = rng.fork(dist.index() as u64).fork(draw as u64);
            let w = sample_distribution(dist, opts.n_samples, &mut stream);
            let stats = weight_stats(&w)?;
            let search = optimal_alpha_search(&w, n_bin, opts.grid_size)?;
            let e_abs = stats.e_abs as f64;
            let e_sq = stats.e_sq as f64;
            points.push(CalibrationPoint {
                distribution: dist,
                e_abs,
                e_sq,
                alpha_star: search.alpha_star as f64,
                moment_ratio: e_sq.sqrt() / e_abs,
                scale_ratio: search.alpha_star as f64 / e_abs,
            });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.moment_ratio).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.scale_ratio).collect();
    let fit = ols_fit(&xs, &ys)?;
    Ok(CalibrationEntry {
        row: CalibrationRow {
            n_bin,
            c1: fit.slope as f32,
            c2: fit.intercept as f32,
            residual_max: fit.residual_max as f32,
            r_squared: fit.r_squared as f32,
        },
        points,
    })
}

/// Calibrates every requested `n_bin` from one seed.
pub fn calibrate_table(
    nbins: &[u32],
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<CalibrationTable> {
    let rng = Rng::new(seed, 0);
    let mut table = CalibrationTable::new(seed, opts.n_samples);
    for &n_bin in nbins {
        table.insert(calibrate_coefficients_with(n_bin, opts, &rng)?.row);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationRow {
    pub n_bin: u32,
    pub c1: f32,
    pub c2: f32,
    pub residual_max: f32,
    pub r_squared: f32,
}

/// Fitted coefficients keyed by `n_bin`, with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTable {
    pub entries: BTreeMap<u32, CalibrationRow>,
    pub distribution_set: String,
    pub n_samples: usize,
    pub seed: u64,
}

const CSV_HEADER: &str = "n_bin,c1,c2,residual_max,r_squared";

/// Output of `calibrate_table(&SUPPORTED_NBINS, &Default::default(), 0)`.
const BUILTIN_ROWS: [(u32, f32, f32, f32, f32); 6] = [
    (2, 0.011658954, 0.9860418, 0.0019736146, 0.48455533),
    (3, 2.5241883, -1.612188, 0.045743134, 0.9709674),
    (4, 3.1166046, -2.0597906, 0.043933675, 0.98303765),
    (8, 7.3666377, -6.7043085, 0.103850715, 0.97947),
    (16, 12.016057, -11.947525, 0.2570773, 0.962835),
    (32, 16.776533, -17.366913, 0.516304, 0.9399601),
];
pub const BUILTIN_SEED: u64 = 0;

impl CalibrationTable {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        CalibrationTable {
            entries: BTreeMap::new(),
            distribution_set: DISTRIBUTION_SET_ID.to_string(),
            n_samples,
            seed,
        }
    }

    /// Coefficients pinned from the seed-0 calibration run.
    pub fn builtin() -> Self {
        let mut t = CalibrationTable::new(BUILTIN_SEED, DEFAULT_CALIBRATION_SAMPLES);
        for (n_bin, c1, c2, residual_max, r_squared) in BUILTIN_ROWS {
            t.insert(CalibrationRow {
                n_bin,
                c1,
                c2,
                residual_max,
                r_squared,
            });
        }
        t
    }

    pub fn insert(&mut self, row: CalibrationRow) {
        self.entries.insert(row.n_bin, row);
    }

    pub fn get(&self, n_bin: u32) -> Option<&CalibrationRow> {
        self.entries.get(&n_bin)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# sawb calibration table\n");
        let _ = writeln!(out, "# distributions={}", self.distribution_set);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# samples={}", self.n_samples);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in self.entries.values() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.n_bin, r.c1, r.c2, r.residual_max, r.r_squared
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut table = CalibrationTable::new(0, 0);
        let mut seen_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    let bad =
                        || QnnError::Format(format!("line {}: bad value for `{}`", lineno + 1, k));
                    match k.trim() {
                        "distributions" => table.distribution_set = v.trim().to_string(),
                        "seed" => table.seed = v.trim().parse().map_err(|_| bad())?,
                        "samples" => table.n_samples = v.trim().parse().map_err(|_| bad())?,
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_header {
                if line != CSV_HEADER {
                    return Err(QnnError::Format(format!(
                        "line {}: expected header `{CSV_HEADER}`",
                        lineno + 1
                    )));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(QnnError::Format(format!(
                    "line {}: expected 5 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let num = |i: usize| -> Result<f32> {
                fields[i].parse::<f32>().map_err(|_| {
                    QnnError::Format(format!("line {}: bad number `{}`", lineno + 1, fields[i]))
                })
            };
            let n_bin: u32 = fields[0].parse().map_err(|_| {
                QnnError::Format(format!("line {}: bad n_bin `{}`", lineno + 1, fields[0]))
            })?;
            check_nbin(n_bin)?;
            table.insert(CalibrationRow {
                n_bin,
                c1: num(1)?,
                c2: num(2)?,
                residual_max: num(3)?,
                r_squared: num(4)?,
            });
        }
        if !seen_header {
            return Err(QnnError::Format(
                "calibration table has no header row".into(),
            ));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| QnnError::io(path, 0, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QnnError::io(path, 0, e))?;
        Self::parse_csv(&text)
    }

    /// Table covering all supported `n_bin`s for the full set.
    pub fn is_complete(&self) -> bool {
        SUPPORTED_NBINS.iter().all(|n| self.entries.contains_key(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_fit_exactly() {
        let xs = [1.1, 1.2, 1.25, 1.3, 1.4, 1.5];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
        let fit = ols_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.intercept + 2.0).abs() < 1e-12);
        assert!(fit.residual_max < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_ratios_are_singular() {
        let err = ols_fit(&[1.2; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap_err();
        assert!(matches!(err, QnnError::Calibration(_)));
    }

    #[test]
    fn too_few_samples_rejected() {
        let rng = Rng::new(1, 0);
        assert!(calibrate_coefficients(4, 9_999, &rng).is_err());
    }

    #[test]
    fn csv_round_trip_and_header_checks() {
        let mut t = CalibrationTable::new(7, 100_000);
        t.insert(CalibrationRow {
            n_bin: 4,
            c1: 3.1234567,
            c2: -2.0987654,
            residual_max: 0.0123,
            r_squared: 0.987_654_3,
        });
        let back = CalibrationTable::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(CalibrationTable::parse_csv("4,1,2,3,4\n").is_err());
        assert!(CalibrationTable::parse_csv(&format!("{CSV_HEADER}\n5,1,2,3,4\n")).is_err());
        assert!(CalibrationTable::parse_csv(&format!("{CSV_HEADER}\n4,1,x,3,4\n")).is_err());
    }
}
