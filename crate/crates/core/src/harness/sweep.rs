use std::fmt::Write as _;
use std::thread;

use super::model::build_model;
use super::spec::{ModelSpec, PactSettings};
use super::train::{evaluate, train, TrainingConfig};
use crate::error::{QnnError, Result};
use crate::io::Dataset;
use crate::sawb::CalibrationTable;

pub const DEFAULT_SWEEP_ALPHAS: [f32; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const SWEEP_HEADER: &str = "run,alpha_init,learnable,val_error,train_error,mean_final_alpha";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub alpha_init: f32,
    pub learnable: bool,
    pub val_error: f32,
    pub train_error: f32,
    pub mean_final_alpha: f32,
}

impl SweepRow {
    pub fn run_name(&self) -> &'static str {
        if self.learnable {
            "pact"
        } else {
            "fixed"
        }
    }
}

/// Trains one model per fixed clipping level in `alphas`, then one with the
/// trainable α of `spec.pact`. Every run uses the same initialization seed
/// and data order; rows come back in input order with the trainable run last.
///
/// With `workers > 1` runs execute on that many threads; results do not
/// depend on the worker count.
pub fn fixed_alpha_sweep(
    spec: &ModelSpec,
    cfg: &TrainingConfig,
    table: &CalibrationTable,
    train_data: &Dataset,
    val_data: &Dataset,
    alphas: &[f32],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(QnnError::Parameter(
            "alpha sweep needs at least one value".into(),
        ));
    }
    let mut specs: Vec<ModelSpec> = alphas
        .iter()
        .map(|&a| {
            spec.clone().with_pact(PactSettings {
                alpha_init: a,
                reg_lambda: 0.0,
                learnable: false,
            })
        })
        .collect();
    let mut trainable = spec.clone();
    trainable.pact.learnable = true;
    specs.push(trainable);

    let run = |s: &ModelSpec| -> Result<SweepRow> {
        let mut model = build_model(s, table, cfg.seed)?;
        let metrics = train(&mut model, cfg, train_data, None)?;
        let val_error = evaluate(&mut model, val_data)?;
        let alphas = model.alphas();
        let mean = alphas.iter().map(|(_, a)| a).sum::<f32>() / alphas.len().max(1) as f32;
        Ok(SweepRow {
            alpha_init: s.pact.alpha_init,
            learnable: s.pact.learnable,
            val_error,
            train_error: metrics.final_train_error().unwrap_or(f32::NAN),
            mean_final_alpha: mean,
        })
    };

    let workers = workers.clamp(1, specs.len());
    if workers == 1 {
        return specs.iter().map(run).collect();
    }
    let mut results: Vec<Option<Result<SweepRow>>> = (0..specs.len()).map(|_| None).collect();
    for (chunk_specs, chunk_out) in specs.chunks(workers).zip(results.chunks_mut(workers)) {
        thread::scope(|scope| {
            let handles: Vec<_> = chunk_specs.iter().map(|s| scope.spawn(|| run(s))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("sweep worker panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("filled")).collect()
}

pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.run_name(),
            r.alpha_init,
            r.learnable,
            r.val_error,
            r.train_error,
            r.mean_final_alpha
        );
    }
    s
}
