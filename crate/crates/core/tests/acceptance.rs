//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 7 train eight desk-scale models (about 12 minutes on one
//! core). Set `QNN_ACCEPTANCE_SKIP_TRAINING=1` to report them as skipped.

mod common;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use qnn_core::harness::{
    build_model, error_curves, fixed_alpha_sweep, train, DEFAULT_SWEEP_ALPHAS,
};
use qnn_core::io::RunConfig;
use qnn_core::sawb::{
    optimal_alpha_search, quant_se, sample_distribution, CalibrationTable, Distribution,
    SawbQuantizer, DEFAULT_GRID_SIZE, SUPPORTED_NBINS,
};
use qnn_core::{Rng, Tensor};

// criterion 1
const EXCESS_SE_BOUND: f64 = 1.07;
const HELD_OUT_TRIALS: u64 = 10;
const HELD_OUT_SAMPLES: usize = 100_000;
const HELD_OUT_SEED_BASE: u64 = 0x5EED_0000;
// criterion 2
const PROPERTY_CASES: usize = 10_000;
// criterion 3
const GRAD_REL_TOL: f64 = 1e-3;
// criterion 4
const LEMMA_TOL_STEPS: usize = 10_000;
// criterion 5
const CURVE_SAMPLES: usize = 100_000;
const CURVE_GRID: [f32; 6] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
// criterion 6
const SWEEP_MARGIN: f32 = 0.01;
// criterion 7
const GAP_MARGIN: f32 = 0.05;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Outcome {
            pass: Some(pass),
            detail,
        }
    }
    fn skipped(detail: &str) -> Self {
        Outcome {
            pass: None,
            detail: detail.to_string(),
        }
    }
}

fn sawb_excess_se() -> Outcome {
    let table = CalibrationTable::builtin();
    let mut worst = Vec::new();
    let mut pass = true;
    for n_bin in SUPPORTED_NBINS {
        let q = SawbQuantizer::from_table(&table, n_bin).unwrap();
        let mut max_ratio = 0.0f64;
        let mut worst_dist = Distribution::Gaussian;
        for dist in Distribution::ALL {
            for trial in 0..HELD_OUT_TRIALS {
                let mut rng = Rng::new(HELD_OUT_SEED_BASE + trial, dist.index() as u64);
                let w = sample_distribution(dist, HELD_OUT_SAMPLES, &mut rng);
                let (wq, _) = q.quantize(&w).unwrap();
                let oracle = optimal_alpha_search(&w, n_bin, DEFAULT_GRID_SIZE).unwrap();
                let wq_star =
                    qnn_core::sawb::quantize_weights(&w, oracle.alpha_star, n_bin).unwrap();
                let ratio = quant_se(&w, &wq).unwrap() / quant_se(&w, &wq_star).unwrap();
                if ratio > max_ratio {
                    max_ratio = ratio;
                    worst_dist = dist;
                }
            }
        }
        pass &= max_ratio <= EXCESS_SE_BOUND;
        worst.push(format!("n{n_bin}={max_ratio:.3}({})", worst_dist.name()));
    }
    Outcome::check(
        pass,
        format!("max SE(α̂)/SE(α*) ≤ {EXCESS_SE_BOUND}: {}", worst.join(" ")),
    )
}

fn quantizer_contracts() -> Outcome {
    let mut rng = Rng::new(0xC0_47AC7, 0);
    let mut u = |lo: f32, hi: f32| lo + (hi - lo) * rng.uniform() as f32;
    let mut violations = Vec::new();
    let mut cases = 0;
    for _ in 0..PROPERTY_CASES {
        let alpha = 10f32.powf(u(-2.0, 2.0));
        let k = 1 + (u(0.0, 8.0) as u32).min(7);
        let pow = u(-4.0, 5.0).floor() as i32;
        let (a, b) = (u(-1.0, 2.0) * alpha, u(-1.0, 2.0) * alpha);
        let n_bin = SUPPORTED_NBINS[(u(0.0, 6.0) as usize).min(5)];
        let alpha_w = 10f32.powf(u(-3.0, 1.0));
        let (wa, wb) = (u(-2.0, 2.0) * alpha_w, u(-2.0, 2.0) * alpha_w);
        for r in [
            check_pact_case(a, alpha, k, pow),
            check_pact_monotone(a, b, alpha, k),
            check_sawb_case(wa, alpha_w, n_bin, pow),
            check_sawb_monotone(wa, wb, alpha_w, n_bin),
        ] {
            cases += 1;
            if let Err(e) = r {
                violations.push(e);
            }
        }
    }
    Outcome::check(
        violations.is_empty(),
        format!(
            "{cases} cases over {PROPERTY_CASES} random (x, α, k, n_bin), {} violations{}",
            violations.len(),
            violations
                .first()
                .map(|v| format!(": {v}"))
                .unwrap_or_default()
        ),
    )
}

fn gradient_checks() -> Outcome {
    let checks: [(&str, fn() -> f64); 7] = [
        ("matmul", gradcheck_matmul),
        ("dense", gradcheck_dense),
        ("conv", gradcheck_conv),
        ("batchnorm", gradcheck_batchnorm),
        ("softmax_ce", gradcheck_softmax_ce),
        ("avgpool", gradcheck_avgpool),
        ("pact", gradcheck_pact),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (name, f) in checks {
        let err = f();
        pass &= err < GRAD_REL_TOL;
        let _ = write!(detail, "{name}={err:.1e} ");
    }
    let branches = pact_branch_enumeration();
    pass &= branches.is_ok();
    let _ = write!(
        detail,
        "(tol {GRAD_REL_TOL:.0e}, {GRADCHECK_POINTS} points); STE branches {}",
        if let Err(e) = &branches {
            e.as_str()
        } else {
            "exact"
        }
    );
    Outcome::check(pass, detail)
}

fn lemma_regimes() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for y_star in [3.0, 0.5, 1.5] {
        let o = lemma_regime(y_star);
        let converged = o.converged_at.is_some_and(|s| s <= LEMMA_TOL_STEPS);
        pass &= converged;
        let step = o.converged_at.map_or("never".into(), |s| s.to_string());
        detail.push(format!("y*={} at step {step}", o.y_star));
        if y_star == 3.0 {
            pass &= !o.w_moved_while_clipped;
            detail.push(format!("w moved while x>α: {}", o.w_moved_while_clipped));
        }
    }
    Outcome::check(pass, detail.join(", "))
}

/// Allows at most one adjacent pair against the expected direction.
fn monotone_within_one(v: &[f32], non_increasing: bool) -> bool {
    let bad = v
        .windows(2)
        .filter(|p| {
            if non_increasing {
                p[1] > p[0]
            } else {
                p[1] < p[0]
            }
        })
        .count();
    bad <= 1
}

fn tradeoff_curves() -> Outcome {
    let mut rng = Rng::new(0xC0_4E5, 0);
    let x: Vec<f32> = (0..CURVE_SAMPLES).map(|_| rng.normal() as f32).collect();
    let pts = error_curves(&Tensor::from_slice(&x), &CURVE_GRID, 2).unwrap();
    let clip: Vec<f32> = pts.iter().map(|p| p.clip_mse).collect();
    let quant: Vec<f32> = pts.iter().map(|p| p.quant_mse).collect();
    let pass = monotone_within_one(&clip, true) && monotone_within_one(&quant, false);
    let fmt = |v: &[f32]| {
        v.iter()
            .map(|e| format!("{e:.2e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Outcome::check(
        pass,
        format!("clip [{}] quant [{}]", fmt(&clip), fmt(&quant)),
    )
}

fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_synthetic.toml");
    RunConfig::load(&path).unwrap()
}

fn skip_training() -> bool {
    std::env::var("QNN_ACCEPTANCE_SKIP_TRAINING").is_ok_and(|v| v == "1")
}

/// Returns the outcome plus the trainable-α validation error for reuse.
fn pact_sweep() -> (Outcome, Option<f32>) {
    if skip_training() {
        return (Outcome::skipped("QNN_ACCEPTANCE_SKIP_TRAINING=1"), None);
    }
    let cfg = desk_config();
    let (train_set, test_set) = cfg.load_data().unwrap();
    let rows = fixed_alpha_sweep(
        &cfg.model_spec().unwrap(),
        &cfg.training_config(),
        &cfg.calibration_table().unwrap(),
        &train_set,
        &test_set,
        &DEFAULT_SWEEP_ALPHAS,
        1,
    )
    .unwrap();
    let (fixed, learned): (Vec<_>, Vec<_>) = rows.iter().partition(|r| !r.learnable);
    let best = fixed
        .iter()
        .min_by(|a, b| a.val_error.total_cmp(&b.val_error))
        .unwrap();
    let pact = learned[0];
    let runs: Vec<String> = fixed
        .iter()
        .map(|r| format!("α={}:{:.2}%", r.alpha_init, 100.0 * r.val_error))
        .collect();
    let outcome = Outcome::check(
        pact.val_error <= best.val_error + SWEEP_MARGIN,
        format!(
            "PACT {:.2}% (mean final α {:.2}) vs best fixed α={} {:.2}% + {:.0} pp [{}]",
            100.0 * pact.val_error,
            pact.mean_final_alpha,
            best.alpha_init,
            100.0 * best.val_error,
            100.0 * SWEEP_MARGIN,
            runs.join(" ")
        ),
    );
    (outcome, Some(pact.val_error))
}

fn run_val_error(cfg: &RunConfig) -> f32 {
    let (train_set, test_set) = cfg.load_data().unwrap();
    let table = cfg.calibration_table().unwrap();
    let mut model = build_model(&cfg.model_spec().unwrap(), &table, cfg.training.seed).unwrap();
    let m = train(
        &mut model,
        &cfg.training_config(),
        &train_set,
        Some(&test_set),
    )
    .unwrap();
    m.final_val_error().unwrap()
}

fn quantization_gap(pact_fpsc: Option<f32>) -> Outcome {
    if skip_training() {
        return Outcome::skipped("QNN_ACCEPTANCE_SKIP_TRAINING=1");
    }
    let base = desk_config();
    let fpsc = pact_fpsc.unwrap_or_else(|| run_val_error(&base));
    let mut fp = base.clone();
    fp.quantization.nbin = 0;
    fp.quantization.bits = 0;
    let mut qsc = base.clone();
    qsc.quantization.shortcut_full_precision = false;
    let fp = run_val_error(&fp);
    let qsc = run_val_error(&qsc);
    Outcome::check(
        fpsc <= fp + GAP_MARGIN && fpsc <= qsc,
        format!(
            "2-bit fp-shortcut {:.2}% vs full precision {:.2}% (gap ≤ {:.0} pp), quantized shortcut {:.2}%",
            100.0 * fpsc,
            100.0 * fp,
            100.0 * GAP_MARGIN,
            100.0 * qsc
        ),
    )
}

const TINY_RUN: &str = "[model]\nwidths = [4, 8, 8]\n[training]\nmax_epochs = 2\nbatch_size = 16\naudit_every = 4\n\
[quantization]\nnbin = 4\nbits = 2\n[data]\nimage = [3, 8, 8]\nclasses = 4\ntrain_samples = 64\ntest_samples = 32\n";

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY_RUN).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        (
            "calibrate",
            vec![
                "calibrate",
                "--nbin",
                "4",
                "--samples",
                "20000",
                "--seed",
                "3",
            ],
            vec!["out.csv"],
        ),
        (
            "train",
            vec!["train", "--config", &cfg],
            vec!["metrics.csv", "model.ckpt", "config.toml"],
        ),
        (
            "sweep-alpha",
            vec!["sweep-alpha", "--config", &cfg, "--alphas", "1,4"],
            vec!["sweep.csv"],
        ),
        (
            "error-curves",
            vec!["error-curves", "--samples", "20000"],
            vec!["out.csv"],
        ),
        ("lemma31", vec!["lemma31", "--steps", "50"], vec!["out.csv"]),
        (
            "inspect-quant",
            vec!["inspect-quant", "--config", &cfg],
            vec!["out.csv"],
        ),
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for (name, args, outputs) in &commands {
        let run = |tag: &str| -> Option<Vec<Vec<u8>>> {
            let out: PathBuf = dir.path().join(format!("{name}-{tag}"));
            std::fs::create_dir_all(&out).unwrap();
            let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            full.push("--out".into());
            full.push(if outputs == &vec!["out.csv"] {
                out.join("out.csv").to_str().unwrap().to_string()
            } else {
                out.to_str().unwrap().to_string()
            });
            let status = Command::new(env!("CARGO_BIN_EXE_qnn"))
                .args(&full)
                .output()
                .unwrap();
            if !status.status.success() {
                return None;
            }
            Some(
                outputs
                    .iter()
                    .map(|f| std::fs::read(out.join(f)).unwrap())
                    .collect(),
            )
        };
        match (run("a"), run("b")) {
            (Some(a), Some(b)) if a == b => files += a.len(),
            (Some(_), Some(_)) => failures.push(format!("{name}: outputs differ")),
            _ => failures.push(format!("{name}: command failed")),
        }
    }
    Outcome::check(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} commands run twice, {files} output files byte-identical",
                commands.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let mut any_failed = false;
    let mut report = |id: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = run();
        let status = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                any_failed = true;
                "FAIL"
            }
            None => "SKIP",
        };
        println!(
            "[{status}] {id}. {name} ({:.1}s): {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report(1, "SAWB excess squared error", &mut sawb_excess_se);
    report(2, "quantizer contracts", &mut quantizer_contracts);
    report(3, "gradient checks", &mut gradient_checks);
    report(4, "single-neuron PACT convergence", &mut lemma_regimes);
    report(5, "clipping/quantization trade-off", &mut tradeoff_curves);
    let mut pact_val = None;
    report(6, "trainable α vs fixed-α sweep", &mut || {
        let (o, v) = pact_sweep();
        pact_val = v;
        o
    });
    report(7, "end-to-end quantization gap", &mut || {
        quantization_gap(pact_val)
    });
    report(8, "determinism", &mut determinism);
    if any_failed {
        std::process::exit(1);
    }
}
