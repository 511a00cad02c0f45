use serde::{Deserialize, Serialize};

use crate::error::{QnnError, Result};
use crate::pact::{DEFAULT_ALPHA_INIT, DEFAULT_REG_LAMBDA};
use crate::sawb::check_nbin;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        out_features: usize,
    },
    BatchNorm,
    Pact,
    AvgPool,
    /// Pre-activation block: BN → PACT → conv3×3 → BN → PACT → conv3×3,
    /// plus an identity or 1×1 projection shortcut.
    ResidualBlock {
        out_channels: usize,
        stride: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Dense { .. } => "dense",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Pact => "pact",
            LayerKind::AvgPool => "avgpool",
            LayerKind::ResidualBlock { .. } => "residual_block",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Weight levels for conv/dense/residual layers; `None` keeps full precision.
    pub weight_nbin: Option<u32>,
    /// Activation bits for PACT/residual layers; `None` leaves them unquantized.
    pub act_bits: Option<u32>,
    /// Residual blocks only.
    pub shortcut_full_precision: bool,
}

impl LayerSpec {
    pub fn plain(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            weight_nbin: None,
            act_bits: None,
            shortcut_full_precision: true,
        }
    }
}

/// How clipping levels behave across every PACT layer of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PactSettings {
    pub alpha_init: f32,
    pub reg_lambda: f32,
    /// False pins every α at `alpha_init` (fixed clipping activation).
    pub learnable: bool,
}

impl Default for PactSettings {
    fn default() -> Self {
        PactSettings {
            alpha_init: DEFAULT_ALPHA_INIT,
            reg_lambda: DEFAULT_REG_LAMBDA,
            learnable: true,
        }
    }
}

/// Quantization applied to the interior of a preset architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub weight_nbin: Option<u32>,
    pub act_bits: Option<u32>,
    pub shortcut_full_precision: bool,
}

impl QuantScheme {
    pub const FULL_PRECISION: QuantScheme = QuantScheme {
        weight_nbin: None,
        act_bits: None,
        shortcut_full_precision: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// `(C, H, W)` of one input image.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Channel scaling for conv and residual layers (≥ 1).
    pub width_multiplier: f32,
    pub pact: PactSettings,
}

impl ModelSpec {
    /// Full pre-activation ResNet: stem conv, `blocks_per_stage` residual
    /// blocks per stage (stride 2 entering every stage after the first),
    /// BN → PACT → global average pool → dense. Stem and classifier stay in
    /// full precision, as does the activation feeding the classifier.
    pub fn preact_resnet(
        name: &str,
        input: (usize, usize, usize),
        classes: usize,
        widths: &[usize],
        blocks_per_stage: usize,
        quant: QuantScheme,
    ) -> Self {
        let mut layers = vec![LayerSpec::plain(LayerKind::Conv {
            out_channels: widths[0],
            kernel: 3,
            stride: 1,
            pad: 1,
        })];
        for (stage, &w) in widths.iter().enumerate() {
            for b in 0..blocks_per_stage {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                layers.push(LayerSpec {
                    kind: LayerKind::ResidualBlock {
                        out_channels: w,
                        stride,
                    },
                    weight_nbin: quant.weight_nbin,
                    act_bits: quant.act_bits,
                    shortcut_full_precision: quant.shortcut_full_precision,
                });
            }
        }
        layers.push(LayerSpec::plain(LayerKind::BatchNorm));
        layers.push(LayerSpec::plain(LayerKind::Pact));
        layers.push(LayerSpec::plain(LayerKind::AvgPool));
        layers.push(LayerSpec::plain(LayerKind::Dense {
            out_features: classes,
        }));
        ModelSpec {
            name: name.to_string(),
            input,
            layers,
            width_multiplier: 1.0,
            pact: PactSettings::default(),
        }
    }

    /// ResNet20/32/44/56 for 32×32×3 inputs, 16/32/64 channels.
    pub fn cifar_resnet(depth: usize, quant: QuantScheme) -> Result<Self> {
        if depth < 8 || !(depth - 2).is_multiple_of(6) {
            return Err(QnnError::Parameter(format!(
                "ResNet depth must be 6n+2, got {depth}"
            )));
        }
        Ok(Self::preact_resnet(
            &format!("resnet{depth}"),
            (3, 32, 32),
            10,
            &[16, 32, 64],
            (depth - 2) / 6,
            quant,
        ))
    }

    /// 8-layer mini ResNet (one block per stage).
    pub fn mini_resnet(
        input: (usize, usize, usize),
        classes: usize,
        widths: [usize; 3],
        quant: QuantScheme,
    ) -> Self {
        Self::preact_resnet("mini_resnet", input, classes, &widths, 1, quant)
    }

    pub fn with_width_multiplier(mut self, m: f32) -> Self {
        self.width_multiplier = m;
        self
    }

    pub fn with_pact(mut self, pact: PactSettings) -> Self {
        self.pact = pact;
        self
    }

    pub(crate) fn scaled(&self, channels: usize) -> usize {
        ((channels as f32 * self.width_multiplier).round() as usize).max(1)
    }

    /// Checks quantization settings and the full-precision boundary layers.
    /// Shape consistency is checked when the model is built.
    pub fn validate(&self) -> Result<()> {
        let build_err = |i: usize, kind: &LayerKind, reason: String| QnnError::Build {
            layer: format!("layer{i} ({})", kind.name()),
            reason,
        };
        if !(self.width_multiplier >= 1.0 && self.width_multiplier.is_finite()) {
            return Err(QnnError::Parameter(format!(
                "width multiplier must be ≥ 1, got {}",
                self.width_multiplier
            )));
        }
        if !(self.pact.alpha_init > 0.0) || self.pact.reg_lambda < 0.0 {
            return Err(QnnError::Parameter(
                "PACT alpha_init must be positive and reg_lambda non-negative".into(),
            ));
        }
        let (first, last) = match (self.layers.first(), self.layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(QnnError::Parameter("model has no layers".into())),
        };
        if !matches!(first.kind, LayerKind::Conv { .. }) || first.weight_nbin.is_some() {
            return Err(build_err(
                0,
                &first.kind,
                "first layer must be a full-precision conv".into(),
            ));
        }
        let last_i = self.layers.len() - 1;
        if !matches!(last.kind, LayerKind::Dense { .. }) || last.weight_nbin.is_some() {
            return Err(build_err(
                last_i,
                &last.kind,
                "last layer must be a full-precision dense layer".into(),
            ));
        }
        if let Some((i, l)) = self
            .layers
            .iter()
            .enumerate()
            .rev()
            .find(|(_, l)| matches!(l.kind, LayerKind::Pact | LayerKind::ResidualBlock { .. }))
        {
            if matches!(l.kind, LayerKind::Pact) && l.act_bits.is_some() {
                return Err(build_err(
                    i,
                    &l.kind,
                    "activation feeding the last layer must not be quantized".into(),
                ));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(n) = l.weight_nbin {
                check_nbin(n).map_err(|e| build_err(i, &l.kind, e.to_string()))?;
            }
            if let Some(k) = l.act_bits {
                if k == 0 || k > crate::pact::MAX_BITS {
                    return Err(build_err(i, &l.kind, format!("bad activation bits {k}")));
                }
            }
        }
        Ok(())
    }
}
