//! `qnn` command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{QnnError, Result};
use crate::harness::{
    build_model, error_curves, evaluate, fixed_alpha_sweep, lemma31_simulate, train,
    write_error_curves_csv, write_lemma31_csv, write_sweep_csv, Model, DEFAULT_SWEEP_ALPHAS,
};
use crate::io::{load_checkpoint, save_checkpoint, RunConfig};
use crate::rng::Rng;
use crate::sawb::{
    bin_levels, calibrate_table, check_nbin, optimal_alpha_search, quant_se, quantize_weights,
    weight_stats, CalibrationOptions, CalibrationTable, DEFAULT_GRID_SIZE, SUPPORTED_NBINS,
};
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(
    name = "qnn",
    version,
    about = "Quantization-aware training with PACT and SAWB"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit SAWB coefficients and write a calibration table CSV.
    Calibrate {
        /// Calibrate a single n_bin (default: all supported).
        #[arg(long, value_parser = parse_nbin)]
        nbin: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples per distribution.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes metrics.csv, model.ckpt and config.toml.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one model per fixed clipping level plus one trainable-α model.
    SweepAlpha {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated fixed clipping levels.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_ALPHAS)]
        alphas: Vec<f32>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Clipping and quantization error of Gaussian activations versus α.
    ErrorCurves {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        bits: u32,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5f32, 1.0, 2.0, 4.0, 8.0, 16.0])]
        alphas: Vec<f32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-neuron clipping-activation SGD simulation.
    Lemma31 {
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        a: f32,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        w0: f32,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        alpha0: f32,
        #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
        y_star: f32,
        #[arg(long, default_value_t = 0.1)]
        eta: f32,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Accepted for uniformity; the simulation is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer weight statistics and scale quality of quantized layers.
    InspectQuant {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to inspect (default: freshly initialized model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file plus command-line overrides.
#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_nbin)]
    nbin: Option<u32>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    audit_every: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn parse_nbin(s: &str) -> std::result::Result<u32, String> {
    let n: u32 = s.parse().map_err(|e| format!("{e}"))?;
    check_nbin(n)
        .map(|_| n)
        .map_err(|_| format!("must be one of {SUPPORTED_NBINS:?}"))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.training.seed = s;
        }
        if let Some(n) = self.nbin {
            cfg.quantization.nbin = n;
        }
        if let Some(k) = self.bits {
            cfg.quantization.bits = k;
        }
        if let Some(n) = self.subset {
            cfg.data.subset = Some(n);
        }
        if let Some(n) = self.audit_every {
            cfg.training.audit_every = n;
        }
        if let Some(n) = self.epochs {
            cfg.training.max_epochs = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| QnnError::io(p, 0, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| QnnError::io(dir, 0, e))
}

/// Builds the configured model, restoring a checkpoint when given. The
/// quantizers use the calibration table stored in the checkpoint.
fn restore(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, CalibrationTable)> {
    let spec = cfg.model_spec()?;
    let table = cfg.calibration_table()?;
    let mut model = build_model(&spec, &table, cfg.training.seed)?;
    let Some(path) = checkpoint else {
        return Ok((model, table));
    };
    let stored = load_checkpoint(path, &mut model)?;
    if stored != table {
        model = build_model(&spec, &stored, cfg.training.seed)?;
        load_checkpoint(path, &mut model)?;
    }
    Ok((model, stored))
}

const INSPECT_HEADER: &str = "layer,n_bin,e_abs,e_sq,alpha_hat,alpha_star,excess_se_pct,histogram";

fn inspect_report(model: &Model) -> Result<String> {
    let mut s = String::from(INSPECT_HEADER);
    s.push('\n');
    for (layer, w, q) in model.quantized_weight_layers() {
        let stats = weight_stats(w)?;
        let (wq, alpha_hat) = q.quantize(w)?;
        let oracle = optimal_alpha_search(w, q.n_bin, DEFAULT_GRID_SIZE)?;
        let excess = if oracle.degenerate {
            0.0
        } else {
            let se_star = quant_se(w, &quantize_weights(w, oracle.alpha_star, q.n_bin)?)?;
            if se_star > 0.0 {
                100.0 * (quant_se(w, &wq)? / se_star - 1.0)
            } else {
                0.0
            }
        };
        let hist = histogram(&wq, q.n_bin, alpha_hat)?;
        let _ = writeln!(
            s,
            "{layer},{},{},{},{alpha_hat},{},{},{}",
            q.n_bin,
            stats.e_abs,
            stats.e_sq,
            oracle.alpha_star,
            excess as f32,
            hist.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";")
        );
    }
    Ok(s)
}

/// Count of quantized weights at each level, lowest level first.
fn histogram(wq: &Tensor, n_bin: u32, alpha: f32) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n_bin as usize];
    if alpha <= 0.0 {
        counts[n_bin as usize / 2] = wq.len();
        return Ok(counts);
    }
    let levels = bin_levels(n_bin, alpha)?;
    for &v in wq.data() {
        let i = levels
            .iter()
            .position(|&l| l == v)
            .ok_or_else(|| QnnError::Input(format!("{v} is not a level of n_bin {n_bin}")))?;
        counts[i] += 1;
    }
    Ok(counts)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Calibrate {
            nbin,
            seed,
            samples,
            out,
        } => {
            let nbins: Vec<u32> = nbin.map_or(SUPPORTED_NBINS.to_vec(), |n| vec![n]);
            let opts = CalibrationOptions {
                n_samples: samples,
                ..Default::default()
            };
            let table = calibrate_table(&nbins, &opts, seed)?;
            write_output(out.as_deref(), &table.to_csv())
        }
        Command::Train { run, out } => {
            let cfg = run.resolve()?;
            let (train_data, test_data) = cfg.load_data()?;
            let (mut model, table) = restore(&cfg, None)?;
            let metrics = train(
                &mut model,
                &cfg.training_config(),
                &train_data,
                Some(&test_data),
            )?;
            create_dir(&out)?;
            write_output(Some(&out.join("metrics.csv")), &metrics.to_csv())?;
            write_output(Some(&out.join("config.toml")), &cfg.to_toml())?;
            save_checkpoint(&out.join("model.ckpt"), &mut model, &table)?;
            println!(
                "train_error={} test_error={}",
                metrics.final_train_error().unwrap_or(f32::NAN),
                metrics.final_val_error().unwrap_or(f32::NAN)
            );
            Ok(())
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.resolve()?;
            let (_, test_data) = cfg.load_data()?;
            let (mut model, _) = restore(&cfg, Some(&checkpoint))?;
            println!("test_error={}", evaluate(&mut model, &test_data)?);
            Ok(())
        }
        Command::SweepAlpha {
            run,
            alphas,
            workers,
            out,
        } => {
            let cfg = run.resolve()?;
            let (train_data, test_data) = cfg.load_data()?;
            let rows = fixed_alpha_sweep(
                &cfg.model_spec()?,
                &cfg.training_config(),
                &cfg.calibration_table()?,
                &train_data,
                &test_data,
                &alphas,
                workers,
            )?;
            create_dir(&out)?;
            let csv = write_sweep_csv(&rows);
            write_output(Some(&out.join("sweep.csv")), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::ErrorCurves {
            seed,
            bits,
            samples,
            alphas,
            out,
        } => {
            if samples == 0 {
                return Err(QnnError::Parameter("need at least one sample".into()));
            }
            let mut rng = Rng::new(seed, 0);
            let data: Vec<f32> = (0..samples).map(|_| rng.normal() as f32).collect();
            let pts = error_curves(&Tensor::from_slice(&data), &alphas, bits)?;
            write_output(out.as_deref(), &write_error_curves_csv(&pts))
        }
        Command::Lemma31 {
            a,
            w0,
            alpha0,
            y_star,
            eta,
            steps,
            seed: _,
            out,
        } => {
            let traj = lemma31_simulate(a, w0, alpha0, y_star, eta, steps)?;
            write_output(out.as_deref(), &write_lemma31_csv(&traj))
        }
        Command::InspectQuant {
            run,
            checkpoint,
            out,
        } => {
            let cfg = run.resolve()?;
            let (model, _) = restore(&cfg, checkpoint.as_deref())?;
            write_output(out.as_deref(), &inspect_report(&model)?)
        }
    }
}

/// Runs one command line (`argv[0]` is the program name).
///
/// Returns 0 on success, 1 on a usage error and 2 on a runtime error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
