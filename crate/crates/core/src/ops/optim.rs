use crate::tensor::Param;

/// One SGD-with-momentum update, then zeroes the gradient.
///
/// `v ← momentum·v + grad + weight_decay·value`, `value ← value − lr·v`.
pub fn sgd_momentum_step(p: &mut Param, lr: f32, momentum: f32, weight_decay: f32) {
    debug_assert!(lr > 0.0, "learning rate must be positive");
    let Param {
        value,
        grad,
        velocity,
    } = p;
    for ((w, g), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data_mut().iter_mut())
        .zip(velocity.data_mut().iter_mut())
    {
        *v = momentum * *v + *g + weight_decay * *w;
        *w -= lr * *v;
        *g = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = Param::new(Tensor::from_slice(&[1.0, -2.0]));
        p.grad = Tensor::from_slice(&[0.5, 1.0]);
        sgd_momentum_step(&mut p, 0.1, 0.0, 0.0);
        assert_eq!(p.value.data(), &[1.0 - 0.05, -2.0 - 0.1]);
        assert_eq!(p.grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_grad_leaves_value() {
        let mut p = Param::new(Tensor::from_slice(&[3.0]));
        sgd_momentum_step(&mut p, 0.1, 0.9, 0.0);
        assert_eq!(p.value.data(), &[3.0]);
    }

    #[test]
    fn two_momentum_steps_displace_by_2_9_lr_g() {
        let (lr, g) = (0.1f32, 2.0f32);
        let mut p = Param::new(Tensor::from_slice(&[0.0]));
        for _ in 0..2 {
            p.grad = Tensor::from_slice(&[g]);
            sgd_momentum_step(&mut p, lr, 0.9, 0.0);
        }
        assert!((p.value.data()[0] + lr * g * 2.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Param::new(Tensor::from_slice(&[1.0]));
        sgd_momentum_step(&mut p, 0.5, 0.0, 0.1);
        assert!((p.value.data()[0] - 0.95).abs() < 1e-7);
    }
}
