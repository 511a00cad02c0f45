use crate::tensor::Tensor;

/// Default per-tensor step: `1e-2 · (1 + max|x|)`.
pub fn gradcheck_step(x: &Tensor) -> f32 {
    1e-2 * (1.0 + x.max_abs())
}

/// Central-difference gradient of `f` at `x`, evaluated element by element.
pub fn finite_diff_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f32) -> Vec<f64> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        // the effective step is what f32 actually represented
        let span = ((orig + h) as f64) - ((orig - h) as f64);
        grad.push((up - down) / span);
    }
    grad
}

/// Max over elements of `|g_analytic − g_numeric| / max(1, |g_numeric|)`.
pub fn finite_diff_check(
    f: impl FnMut(&Tensor) -> f64,
    analytic: &Tensor,
    x: &Tensor,
    h: f32,
) -> f64 {
    assert_eq!(
        analytic.shape(),
        x.shape(),
        "gradient shape must match input"
    );
    finite_diff_gradient(f, x, h)
        .iter()
        .zip(analytic.data())
        .map(|(&num, &ana)| (ana as f64 - num).abs() / num.abs().max(1.0))
        .fold(0.0, f64::max)
}
