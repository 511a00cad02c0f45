use std::fmt::Write as _;

use super::model::Model;
use crate::error::{QnnError, Result};
use crate::io::{augment_batch, Dataset};
use crate::ops::{sgd_momentum_step, softmax_cross_entropy, Mode};
use crate::rng::Rng;
use crate::sawb::{optimal_alpha_search, quant_se, quantize_weights, DEFAULT_GRID_SIZE};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Decay points on a 200-epoch scale; rescaled to `max_epochs`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f32,
    pub seed: u64,
    pub augment: bool,
    /// Run the exhaustive scale oracle on every quantized layer this often.
    pub audit_every: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 128,
            max_epochs: 200,
            lr_decay_epochs: vec![60, 120],
            lr_decay_factor: 0.1,
            seed: 0,
            augment: false,
            audit_every: None,
        }
    }
}

const REFERENCE_EPOCHS: usize = 200;

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(QnnError::Parameter(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(QnnError::Parameter(
                "momentum must be in [0, 1) and weight decay non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.audit_every == Some(0) {
            return Err(QnnError::Parameter(
                "batch size, epochs and audit interval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Decay epochs scaled to `max_epochs` (60/120 of 200 become 12/24 of 40).
    pub fn scaled_decay_epochs(&self) -> Vec<usize> {
        self.lr_decay_epochs
            .iter()
            .map(|&e| (e * self.max_epochs + REFERENCE_EPOCHS / 2) / REFERENCE_EPOCHS)
            .collect()
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let decays = self
            .scaled_decay_epochs()
            .iter()
            .filter(|&&e| epoch >= e)
            .count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f32,
    pub train_error: f32,
    pub val_error: Option<f32>,
    /// α of every PACT layer at the end of the epoch.
    pub alphas: Vec<(String, f32)>,
}

/// Oracle comparison for one quantized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRecord {
    pub epoch: usize,
    pub step: usize,
    pub layer: String,
    pub alpha_hat: f32,
    pub alpha_star: f32,
    /// `100·(SE(α̂)/SE(α*) − 1)`.
    pub excess_se_pct: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub audits: Vec<AuditRecord>,
}

pub const METRICS_HEADER: &str = "epoch,split,metric,layer,value";

impl RunMetrics {
    pub fn final_val_error(&self) -> Option<f32> {
        self.epochs.last().and_then(|e| e.val_error)
    }

    pub fn final_train_error(&self) -> Option<f32> {
        self.epochs.last().map(|e| e.train_error)
    }

    /// `(epoch, layer, α)` rows, one per PACT layer per epoch.
    pub fn alpha_trajectory(&self) -> Vec<(usize, &str, f32)> {
        self.epochs
            .iter()
            .flat_map(|e| e.alphas.iter().map(move |(l, a)| (e.epoch, l.as_str(), *a)))
            .collect()
    }

    /// Long-format CSV under [`METRICS_HEADER`]. Audit rows carry
    /// `audit_step=<n>` in the split column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        let mut row = |epoch: usize, split: &str, metric: &str, layer: &str, value: f32| {
            let _ = writeln!(s, "{epoch},{split},{metric},{layer},{value}");
        };
        for e in &self.epochs {
            row(e.epoch, "train", "lr", "", e.lr);
            row(e.epoch, "train", "loss", "", e.train_loss);
            row(e.epoch, "train", "error", "", e.train_error);
            if let Some(v) = e.val_error {
                row(e.epoch, "val", "error", "", v);
            }
            for (layer, a) in &e.alphas {
                row(e.epoch, "train", "alpha", layer, *a);
            }
        }
        for a in &self.audits {
            let split = format!("audit_step={}", a.step);
            row(a.epoch, &split, "alpha_hat", &a.layer, a.alpha_hat);
            row(a.epoch, &split, "alpha_star", &a.layer, a.alpha_star);
            row(a.epoch, &split, "excess_se_pct", &a.layer, a.excess_se_pct);
        }
        s
    }
}

fn count_errors(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l)
        .count()
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One optimizer step on a batch; returns `(loss, misclassified)`.
///
/// Forward quantizes weights on the fly from the latent values; backward uses
/// straight-through gradients. Then the α regularizer is added, SGD with
/// momentum updates every parameter (weight decay on conv/dense weights
/// only), and α is clamped to its floor.
pub fn train_step(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    lr: f32,
    cfg: &TrainingConfig,
) -> Result<(f32, usize)> {
    let logits = model.forward(x, Mode::Train)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
    if !loss.is_finite() {
        return Err(QnnError::NonFinite {
            layer: "loss".into(),
        });
    }
    let errors = count_errors(&logits, labels);
    model.backward(&grad)?;
    model.visit_pacts(&mut |_, p| p.apply_regularizer());
    model.visit_params(&mut |_, p, kind| {
        let wd = if kind.decays() { cfg.weight_decay } else { 0.0 };
        sgd_momentum_step(p, lr, cfg.momentum, wd);
    });
    model.visit_pacts(&mut |_, p| p.clamp_alpha());
    Ok((loss, errors))
}

fn audit(model: &Model, epoch: usize, step: usize) -> Result<Vec<AuditRecord>> {
    let mut out = Vec::new();
    for (layer, w, q) in model.quantized_weight_layers() {
        let (wq, alpha_hat) = q.quantize(w)?;
        let oracle = optimal_alpha_search(w, q.n_bin, DEFAULT_GRID_SIZE)?;
        if oracle.degenerate {
            continue;
        }
        let se_hat = quant_se(w, &wq)?;
        let se_star = quant_se(w, &quantize_weights(w, oracle.alpha_star, q.n_bin)?)?;
        let excess = if se_star > 0.0 {
            100.0 * (se_hat / se_star - 1.0)
        } else {
            0.0
        };
        out.push(AuditRecord {
            epoch,
            step,
            layer,
            alpha_hat,
            alpha_star: oracle.alpha_star,
            excess_se_pct: excess as f32,
        });
    }
    Ok(out)
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_474d;

/// Minibatch SGD for `cfg.max_epochs` epochs, evaluating on `val` after each.
pub fn train(
    model: &mut Model,
    cfg: &TrainingConfig,
    data: &Dataset,
    val: Option<&Dataset>,
) -> Result<RunMetrics> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(QnnError::Input("training set is empty".into()));
    }
    let mut shuffle_rng = Rng::new(cfg.seed, SHUFFLE_STREAM);
    let mut augment_rng = Rng::new(cfg.seed, AUGMENT_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = RunMetrics::default();
    let mut step = 0usize;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut errors) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (mut x, y) = data.batch(batch);
            if cfg.augment {
                x = augment_batch(&x, &mut augment_rng);
            }
            let (loss, e) = train_step(model, &x, &y, lr, cfg)?;
            loss_sum += loss as f64 * batch.len() as f64;
            errors += e;
            step += 1;
            if cfg.audit_every.is_some_and(|n| step.is_multiple_of(n)) {
                metrics.audits.extend(audit(model, epoch + 1, step)?);
            }
        }
        let val_error = val.map(|v| evaluate(model, v)).transpose()?;
        metrics.epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: (loss_sum / data.len() as f64) as f32,
            train_error: errors as f32 / data.len() as f32,
            val_error,
            alphas: model.alphas(),
        });
    }
    Ok(metrics)
}

const EVAL_BATCH: usize = 256;

/// Top-1 error in eval mode.
pub fn evaluate(model: &mut Model, data: &Dataset) -> Result<f32> {
    if data.is_empty() {
        return Err(QnnError::Input("evaluation set is empty".into()));
    }
    let mut errors = 0;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let count = EVAL_BATCH.min(data.len() - start);
        let x = data.images.slice_rows(start, count);
        let logits = model.forward(&x, Mode::Eval)?;
        errors += count_errors(&logits, &data.labels[start..start + count]);
    }
    Ok(errors as f32 / data.len() as f32)
}
