//! Run configuration, read from a TOML file with `[model]`, `[training]`,
//! `[quantization]` and `[data]` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QnnError, Result};
use crate::harness::{ModelSpec, PactSettings, QuantScheme, TrainingConfig};
use crate::pact::{DEFAULT_ALPHA_INIT, DEFAULT_REG_LAMBDA};
use crate::rng::Rng;
use crate::sawb::CalibrationTable;

use super::dataset::{gen_synthetic, load_cifar10, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `mini_resnet` or `resnetN` (N = 6n+2).
    pub arch: String,
    /// Stage widths for `mini_resnet`.
    pub widths: [usize; 3],
    pub width_multiplier: f32,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: "mini_resnet".into(),
            widths: [8, 16, 32],
            width_multiplier: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Decay epochs relative to a 200-epoch schedule.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f32,
    pub seed: u64,
    pub augment: bool,
    /// Oracle audit interval in steps; 0 disables auditing.
    pub audit_every: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainingSection {
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            lr_decay_epochs: t.lr_decay_epochs,
            lr_decay_factor: t.lr_decay_factor,
            seed: t.seed,
            augment: t.augment,
            audit_every: t.audit_every.unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizationSection {
    /// Weight levels; 0 keeps weights in full precision.
    pub nbin: u32,
    /// Activation bits; 0 leaves activations unquantized.
    pub bits: u32,
    pub shortcut_full_precision: bool,
    pub alpha_init: f32,
    pub reg_lambda: f32,
    pub learnable_alpha: bool,
    /// CSV produced by `calibrate`; the built-in table is used when absent.
    pub calibration_table: Option<PathBuf>,
}

impl Default for QuantizationSection {
    fn default() -> Self {
        QuantizationSection {
            nbin: 0,
            bits: 0,
            shortcut_full_precision: true,
            alpha_init: DEFAULT_ALPHA_INIT,
            reg_lambda: DEFAULT_REG_LAMBDA,
            learnable_alpha: true,
            calibration_table: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic` or `cifar10`.
    pub source: String,
    pub dir: Option<PathBuf>,
    /// Stratified CIFAR-10 training subset size.
    pub subset: Option<usize>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub classes: usize,
    /// Synthetic image shape `[C, H, W]`.
    pub image: [usize; 3],
    pub sigma: f32,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synthetic".into(),
            dir: None,
            subset: None,
            train_samples: 2000,
            test_samples: 500,
            classes: 10,
            image: [3, 16, 16],
            sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub quantization: QuantizationSection,
    pub data: DataSection,
}

const DATA_STREAM_TRAIN: u64 = 0xda7a_0001;
const DATA_STREAM_TEST: u64 = 0xda7a_0002;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| QnnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QnnError::io(path, 0, e))?;
        Self::parse(&text)
    }

    /// Canonical form: every key, in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        if !(t.lr > 0.0) || t.batch_size == 0 || t.max_epochs == 0 {
            return Err(QnnError::Config(
                "training needs lr > 0, batch_size ≥ 1 and max_epochs ≥ 1".into(),
            ));
        }
        match self.data.source.as_str() {
            "synthetic" => {}
            "cifar10" if self.data.dir.is_some() => {}
            "cifar10" => return Err(QnnError::Config("data.dir is required for cifar10".into())),
            other => return Err(QnnError::Config(format!("unknown data source `{other}`"))),
        }
        self.model_spec().and_then(|s| s.validate())
    }

    pub fn quant_scheme(&self) -> QuantScheme {
        let q = &self.quantization;
        QuantScheme {
            weight_nbin: (q.nbin != 0).then_some(q.nbin),
            act_bits: (q.bits != 0).then_some(q.bits),
            shortcut_full_precision: q.shortcut_full_precision,
        }
    }

    fn input_shape(&self) -> ((usize, usize, usize), usize) {
        match self.data.source.as_str() {
            "cifar10" => ((3, 32, 32), 10),
            _ => {
                let [c, h, w] = self.data.image;
                ((c, h, w), self.data.classes)
            }
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let (input, classes) = self.input_shape();
        let quant = self.quant_scheme();
        let arch = self.model.arch.as_str();
        let spec = if arch == "mini_resnet" {
            ModelSpec::mini_resnet(input, classes, self.model.widths, quant)
        } else if let Some(depth) = arch.strip_prefix("resnet").and_then(|d| d.parse().ok()) {
            let mut s = ModelSpec::cifar_resnet(depth, quant)?;
            s.input = input;
            if let Some(last) = s.layers.last_mut() {
                last.kind = crate::harness::LayerKind::Dense {
                    out_features: classes,
                };
            }
            s
        } else {
            return Err(QnnError::Config(format!("unknown model arch `{arch}`")));
        };
        let q = &self.quantization;
        Ok(spec
            .with_width_multiplier(self.model.width_multiplier)
            .with_pact(PactSettings {
                alpha_init: q.alpha_init,
                reg_lambda: q.reg_lambda,
                learnable: q.learnable_alpha,
            }))
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            lr_decay_epochs: t.lr_decay_epochs.clone(),
            lr_decay_factor: t.lr_decay_factor,
            seed: t.seed,
            augment: t.augment,
            audit_every: (t.audit_every != 0).then_some(t.audit_every),
        }
    }

    pub fn calibration_table(&self) -> Result<CalibrationTable> {
        match &self.quantization.calibration_table {
            Some(p) => CalibrationTable::load(p),
            None => Ok(CalibrationTable::builtin()),
        }
    }

    /// `(train, test)` for the configured source, seeded by `training.seed`.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let seed = self.training.seed;
        let d = &self.data;
        match d.source.as_str() {
            "cifar10" => {
                let dir = d.dir.as_ref().expect("validated");
                load_cifar10(dir, d.subset, &mut Rng::new(seed, DATA_STREAM_TRAIN))
            }
            _ => {
                let [c, h, w] = d.image;
                let train = gen_synthetic(
                    d.train_samples,
                    d.classes,
                    (c, h, w),
                    d.sigma,
                    &mut Rng::new(seed, DATA_STREAM_TRAIN),
                )?;
                let test = gen_synthetic(
                    d.test_samples,
                    d.classes,
                    (c, h, w),
                    d.sigma,
                    &mut Rng::new(seed, DATA_STREAM_TEST),
                )?;
                Ok((train, test))
            }
        }
    }
}
