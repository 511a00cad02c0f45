use crate::error::{QnnError, Result};
use crate::tensor::{Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[N×C×…]` inputs.
///
/// Running statistics follow `running ← momentum·running + (1−momentum)·batch`,
/// with the unbiased batch variance feeding `running_var`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    x_hat: Vec<f32>,
    inv_std: Vec<f32>,
    mode: Mode,
}

pub const DEFAULT_BN_MOMENTUM: f32 = 0.9;
pub const DEFAULT_BN_EPS: f32 = 1e-5;

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self::with_config(channels, DEFAULT_BN_MOMENTUM, DEFAULT_BN_EPS)
    }

    pub fn with_config(channels: usize, momentum: f32, eps: f32) -> Self {
        assert!(eps > 0.0, "batchnorm eps must be positive");
        BatchNorm {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum,
            eps,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let c = self.channels();
        if x.ndim() < 2 || x.shape()[1] != c {
            return Err(QnnError::Dimension {
                op: "batchnorm",
                lhs: x.shape().to_vec(),
                rhs: vec![c],
            });
        }
        let spatial: usize = x.shape()[2..].iter().product();
        Ok((x.shape()[0], c, spatial))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, spatial) = self.layout(x)?;
        let m = n * spatial;
        let xd = x.data();
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * spatial;
                        for v in &xd[base..base + spatial] {
                            s += *v as f64;
                        }
                    }
                    let mu = s / m as f64;
                    let mut sq = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * spatial;
                        for v in &xd[base..base + spatial] {
                            let d = *v as f64 - mu;
                            sq += d * d;
                        }
                    }
                    mean[ch] = mu as f32;
                    var[ch] = (sq / m as f64) as f32;
                    let unbiased = if m > 1 {
                        (sq / (m - 1) as f64) as f32
                    } else {
                        var[ch]
                    };
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = self.momentum * *rm + (1.0 - self.momentum) * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = self.momentum * *rv + (1.0 - self.momentum) * unbiased;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(self.running_mean.data());
                var.copy_from_slice(self.running_var.data());
            }
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut x_hat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * spatial;
                for i in base..base + spatial {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    x_hat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        self.cache = Some(Cache {
            x_hat,
            inv_std,
            mode,
        });
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    /// Accumulates into `gamma.grad`/`beta.grad` and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (n, c, spatial) = self.layout(grad_out)?;
        let cache = self
            .cache
            .take()
            .ok_or_else(|| QnnError::Input("batchnorm backward called before forward".into()))?;
        if cache.x_hat.len() != grad_out.len() {
            return Err(QnnError::Dimension {
                op: "batchnorm_backward",
                lhs: vec![cache.x_hat.len()],
                rhs: grad_out.shape().to_vec(),
            });
        }
        let m = (n * spatial) as f32;
        let g = grad_out.data();
        let gamma = self.gamma.value.data().to_vec();
        let mut gx = vec![0.0f32; g.len()];
        for ch in 0..c {
            let mut sum_g = 0.0f32;
            let mut sum_gx = 0.0f32;
            for ni in 0..n {
                let base = (ni * c + ch) * spatial;
                for i in base..base + spatial {
                    sum_g += g[i];
                    sum_gx += g[i] * cache.x_hat[i];
                }
            }
            self.beta.grad.data_mut()[ch] += sum_g;
            self.gamma.grad.data_mut()[ch] += sum_gx;
            let scale = gamma[ch] * cache.inv_std[ch];
            for ni in 0..n {
                let base = (ni * c + ch) * spatial;
                for i in base..base + spatial {
                    gx[i] = match cache.mode {
                        Mode::Train => scale / m * (m * g[i] - sum_g - cache.x_hat[i] * sum_gx),
                        Mode::Eval => scale * g[i],
                    };
                }
            }
        }
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), gx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm::new(2);
        bn.gamma.value = Tensor::new(&[2], vec![3.0, -2.0]).unwrap();
        bn.beta.value = Tensor::new(&[2], vec![0.25, 1.5]).unwrap();
        let x = Tensor::full(&[1, 2, 2, 2], 7.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let want = if i < 4 { 0.25 } else { 1.5 };
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn standardized_channel_passes_through() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_track_batches() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-6);
        // unbiased variance of {1,3} is 2
        assert!((bn.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-6);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        let want = (1.0 - 0.2) / (1.1f32 + 1e-5).sqrt();
        assert!((y.data()[0] - want).abs() < 1e-6);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut bn = BatchNorm::new(3);
        assert!(bn
            .forward(&Tensor::zeros(&[2, 2, 1, 1]), Mode::Train)
            .is_err());
    }
}
