//! Parameterized clipping activation with k-bit linear quantization.
//!
//! The activation clips its input to `[0, α]` where `α` is trained by SGD.
//! Quantization maps the clipped value onto `2^k` evenly spaced levels
//! spanning `[0, α]`. Gradients use the straight-through estimator: the
//! rounding step passes gradient unchanged, so `∂y_q/∂x = 𝟙[0 ≤ x < α]` and
//! `∂y_q/∂α = 𝟙[x ≥ α]`.

use crate::error::{QnnError, Result};
use crate::tensor::{Param, Tensor};

pub const DEFAULT_ALPHA_INIT: f32 = 8.0;
pub const DEFAULT_REG_LAMBDA: f32 = 0.0002;
/// Lower bound `α` is clamped to after each optimizer step.
pub const ALPHA_FLOOR: f32 = 1e-3;
pub const MAX_BITS: u32 = 24;

fn check_alpha(alpha: f32) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(QnnError::Parameter(format!(
            "clipping level must be positive and finite, got {alpha}"
        )))
    }
}

/// Highest level index `2^k − 1`.
pub fn levels_for_bits(bits: u32) -> f32 {
    ((1u64 << bits) - 1) as f32
}

/// `y = min(max(x, 0), α)`.
pub fn pact_forward(x: &Tensor, alpha: f32) -> Result<Tensor> {
    check_alpha(alpha)?;
    Ok(x.map(|v| clip(v, alpha)))
}

#[inline]
fn clip(v: f32, alpha: f32) -> f32 {
    if v < 0.0 {
        0.0
    } else if v < alpha {
        v
    } else {
        alpha
    }
}

#[inline]
fn quantize_value(y: f32, alpha: f32, top: f32) -> f32 {
    // f32::round is half-away-from-zero
    let level = (y * top / alpha).round();
    if level >= top {
        alpha
    } else {
        level * alpha / top
    }
}

/// `y_q = round(y·(2^k−1)/α) · α/(2^k−1)` for `y ∈ [0, α]`.
///
/// The top level maps back to `α` exactly.
pub fn pact_quantize(y: &Tensor, alpha: f32, bits: u32) -> Tensor {
    debug_assert!((1..=MAX_BITS).contains(&bits), "bits out of range: {bits}");
    debug_assert!(alpha > 0.0);
    debug_assert!(
        y.data().iter().all(|&v| (0.0..=alpha).contains(&v)),
        "pact_quantize input outside [0, α]"
    );
    let top = levels_for_bits(bits);
    y.map(|v| quantize_value(v, alpha, top))
}

/// Straight-through gradients for input and clipping level.
pub fn pact_backward(x: &Tensor, alpha: f32, grad_out: &Tensor) -> Result<(Tensor, f32)> {
    x.ensure_same_shape(grad_out, "pact_backward")?;
    let mut g_alpha = 0.0f32;
    let mut gx = Vec::with_capacity(x.len());
    for (&xi, &gi) in x.data().iter().zip(grad_out.data()) {
        if xi >= alpha {
            g_alpha += gi;
            gx.push(0.0);
        } else if xi >= 0.0 {
            gx.push(gi);
        } else {
            gx.push(0.0);
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), gx), g_alpha))
}

/// Derivative of the `λ·α²` penalty.
pub fn alpha_reg_grad(alpha: f32, reg_lambda: f32) -> f32 {
    debug_assert!(reg_lambda >= 0.0);
    2.0 * reg_lambda * alpha
}

/// Per-layer activation state: one scalar `α` shared by the whole layer.
#[derive(Clone, Debug)]
pub struct PactActivation {
    pub alpha: Param,
    pub bits: u32,
    pub reg_lambda: f32,
    pub quantize_enabled: bool,
    /// When false, `α` is a fixed clipping level that never receives updates.
    pub learnable: bool,
    input: Option<Tensor>,
}

impl PactActivation {
    pub fn new(
        alpha_init: f32,
        bits: u32,
        reg_lambda: f32,
        quantize_enabled: bool,
    ) -> Result<Self> {
        check_alpha(alpha_init)?;
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(QnnError::Parameter(format!(
                "activation bits must be in 1..={MAX_BITS}, got {bits}"
            )));
        }
        if reg_lambda < 0.0 || !reg_lambda.is_finite() {
            return Err(QnnError::Parameter(format!(
                "alpha regularizer must be non-negative, got {reg_lambda}"
            )));
        }
        Ok(PactActivation {
            alpha: Param::scalar(alpha_init),
            bits,
            reg_lambda,
            quantize_enabled,
            learnable: true,
            input: None,
        })
    }

    pub fn fixed(alpha: f32, bits: u32, quantize_enabled: bool) -> Result<Self> {
        let mut act = Self::new(alpha, bits, 0.0, quantize_enabled)?;
        act.learnable = false;
        Ok(act)
    }

    pub fn alpha_value(&self) -> f32 {
        self.alpha.value.data()[0]
    }

    /// Returns `(clipped, output)`; `output` is quantized when enabled.
    pub fn forward_both(&mut self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let alpha = self.alpha_value();
        let clipped = pact_forward(x, alpha)?;
        let out = if self.quantize_enabled {
            pact_quantize(&clipped, alpha, self.bits)
        } else {
            clipped.clone()
        };
        self.input = Some(x.clone());
        Ok((clipped, out))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let alpha = self.alpha_value();
        let clipped = pact_forward(x, alpha)?;
        self.input = Some(x.clone());
        Ok(if self.quantize_enabled {
            pact_quantize(&clipped, alpha, self.bits)
        } else {
            clipped
        })
    }

    /// Accumulates the data gradient of `α` and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| QnnError::Input("pact backward called before forward".into()))?;
        let (gx, g_alpha) = pact_backward(&x, self.alpha_value(), grad_out)?;
        if self.learnable {
            self.alpha.grad.data_mut()[0] += g_alpha;
        }
        Ok(gx)
    }

    /// Adds the `λ·α²` gradient; call once per step before the optimizer.
    pub fn apply_regularizer(&mut self) {
        if self.learnable {
            let a = self.alpha_value();
            self.alpha.grad.data_mut()[0] += alpha_reg_grad(a, self.reg_lambda);
        }
    }

    pub fn clamp_alpha(&mut self) {
        let a = &mut self.alpha.value.data_mut()[0];
        *a = a.max(ALPHA_FLOOR);
    }
}
