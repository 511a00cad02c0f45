#![allow(dead_code)]

use qnn_core::harness::lemma31_simulate;
use qnn_core::ops::{
    conv2d, conv2d_backward, dense, dense_backward, global_avg_pool, global_avg_pool_backward,
    gradcheck_step, matmul, matmul_backward, softmax_cross_entropy, BatchNorm, Mode,
};
use qnn_core::pact::{levels_for_bits, pact_backward, pact_forward, pact_quantize, PactActivation};
use qnn_core::sawb::{bin_levels, quantize_weights};
use qnn_core::{Rng, Tensor};

// ---------------------------------------------------------------------------
// quantizer contracts

/// Every contract of the activation quantizer at one `(x, α, k)`.
pub fn check_pact_case(x: f32, alpha: f32, k: u32, scale_pow: i32) -> Result<(), String> {
    let top = levels_for_bits(k);
    let y = pact_forward(&Tensor::from_slice(&[x]), alpha).unwrap();
    let yv = y.data()[0];
    let q = pact_quantize(&y, alpha, k).data()[0];
    let levels: Vec<f32> = (0..=top as u32)
        .map(|j| {
            if j as f32 == top {
                alpha
            } else {
                j as f32 * alpha / top
            }
        })
        .collect();
    if !levels.contains(&q) {
        return Err(format!("x={x} α={alpha} k={k}: {q} is not a level"));
    }
    let d = (yv - q).abs();
    // rounding happens on y·(2^k−1)/α, so exact ties may differ by an ulp
    let slack = 4.0 * f32::EPSILON * alpha;
    if levels.iter().any(|&l| (yv - l).abs() < d - slack) {
        return Err(format!(
            "x={x} α={alpha} k={k}: {q} is not the nearest level"
        ));
    }
    let bound = 0.5 * alpha / top;
    if d > bound * (1.0 + 1e-5) {
        return Err(format!("x={x} α={alpha} k={k}: error {d} exceeds {bound}"));
    }
    let again = pact_quantize(&Tensor::from_slice(&[q]), alpha, k).data()[0];
    if again != q {
        return Err(format!(
            "x={x} α={alpha} k={k}: not idempotent ({q} → {again})"
        ));
    }
    let c = 2f32.powi(scale_pow);
    let ys = pact_forward(&Tensor::from_slice(&[x * c]), alpha * c).unwrap();
    let qs = pact_quantize(&ys, alpha * c, k).data()[0];
    if qs != q * c {
        return Err(format!("x={x} α={alpha} k={k} c={c}: {qs} ≠ {}", q * c));
    }
    Ok(())
}

pub fn check_pact_monotone(x1: f32, x2: f32, alpha: f32, k: u32) -> Result<(), String> {
    let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
    let y = pact_forward(&Tensor::from_slice(&[lo, hi]), alpha).unwrap();
    let q = pact_quantize(&y, alpha, k);
    if q.data()[0] > q.data()[1] {
        return Err(format!("α={alpha} k={k}: q({lo}) > q({hi})"));
    }
    Ok(())
}

/// Every contract of the weight quantizer at one `(w, α_w, n_bin)`.
pub fn check_sawb_case(w: f32, alpha: f32, n_bin: u32, scale_pow: i32) -> Result<(), String> {
    let levels = bin_levels(n_bin, alpha).unwrap();
    let q = quantize_weights(&Tensor::from_slice(&[w]), alpha, n_bin)
        .unwrap()
        .data()[0];
    if !levels.contains(&q) {
        return Err(format!("w={w} α={alpha} n={n_bin}: {q} is not a level"));
    }
    let d = (w - q).abs();
    if levels.iter().any(|&l| (w - l).abs() < d) {
        return Err(format!(
            "w={w} α={alpha} n={n_bin}: {q} is not the nearest level"
        ));
    }
    if w.abs() <= alpha {
        let half_step = alpha / (n_bin - 1) as f32;
        if d > half_step * (1.0 + 1e-5) {
            return Err(format!(
                "w={w} α={alpha} n={n_bin}: error {d} exceeds {half_step}"
            ));
        }
    }
    let again = quantize_weights(&Tensor::from_slice(&[q]), alpha, n_bin)
        .unwrap()
        .data()[0];
    if again != q {
        return Err(format!("w={w} α={alpha} n={n_bin}: not idempotent"));
    }
    let c = 2f32.powi(scale_pow);
    let qs = quantize_weights(&Tensor::from_slice(&[w * c]), alpha * c, n_bin)
        .unwrap()
        .data()[0];
    if qs != q * c {
        return Err(format!("w={w} α={alpha} n={n_bin} c={c}: {qs} ≠ {}", q * c));
    }
    Ok(())
}

pub fn check_sawb_monotone(w1: f32, w2: f32, alpha: f32, n_bin: u32) -> Result<(), String> {
    let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
    let q = quantize_weights(&Tensor::from_slice(&[lo, hi]), alpha, n_bin).unwrap();
    if q.data()[0] > q.data()[1] {
        return Err(format!("α={alpha} n={n_bin}: q({lo}) > q({hi})"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradient checks

pub const GRADCHECK_POINTS: usize = 100;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(r.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Relative error of `analytic` against a central difference of `f` at the
/// coordinates `coords` of `x`.
fn check_coords(
    mut f: impl FnMut(&Tensor) -> f64,
    analytic: &Tensor,
    x: &Tensor,
    coords: &[usize],
) -> f64 {
    let h = gradcheck_step(x);
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let span = (orig + h) as f64 - (orig - h) as f64;
        let num = (up - down) / span;
        let err = (analytic.data()[i] as f64 - num).abs() / num.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

fn pick(n: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    (0..count).map(|_| rng.below(n as u64) as usize).collect()
}

/// Runs `trial` until `GRADCHECK_POINTS` coordinates have been checked.
fn over_points(seed: u64, per_trial: usize, mut trial: impl FnMut(&mut Rng, usize) -> f64) -> f64 {
    let mut rng = Rng::new(seed, 0);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < GRADCHECK_POINTS {
        let n = per_trial.min(GRADCHECK_POINTS - done);
        worst = worst.max(trial(&mut rng, n));
        done += n;
    }
    worst
}

pub fn gradcheck_matmul() -> f64 {
    over_points(1, 10, |rng, n| {
        let a = randn(&[3, 5], rng);
        let b = randn(&[5, 4], rng);
        let r = randn(&[3, 4], rng);
        let (ga, gb) = matmul_backward(&a, &b, &r).unwrap();
        let ca = pick(a.len(), n / 2, rng);
        let cb = pick(b.len(), n - n / 2, rng);
        check_coords(|t| project(&matmul(t, &b).unwrap(), &r), &ga, &a, &ca).max(check_coords(
            |t| project(&matmul(&a, t).unwrap(), &r),
            &gb,
            &b,
            &cb,
        ))
    })
}

pub fn gradcheck_dense() -> f64 {
    over_points(2, 10, |rng, n| {
        let x = randn(&[4, 6], rng);
        let w = randn(&[3, 6], rng);
        let b = randn(&[3], rng);
        let r = randn(&[4, 3], rng);
        let (gx, gw, gb) = dense_backward(&x, &w, &r).unwrap();
        let cx = pick(x.len(), n / 3, rng);
        let cw = pick(w.len(), n / 3, rng);
        let cb = pick(b.len(), n - 2 * (n / 3), rng);
        check_coords(|t| project(&dense(t, &w, &b).unwrap(), &r), &gx, &x, &cx)
            .max(check_coords(
                |t| project(&dense(&x, t, &b).unwrap(), &r),
                &gw,
                &w,
                &cw,
            ))
            .max(check_coords(
                |t| project(&dense(&x, &w, t).unwrap(), &r),
                &gb,
                &b,
                &cb,
            ))
    })
}

pub fn gradcheck_conv() -> f64 {
    let configs = [(1usize, 1usize), (2, 0), (1, 0), (2, 1)];
    let mut k = 0;
    over_points(3, 10, |rng, n| {
        let (stride, pad) = configs[k % configs.len()];
        k += 1;
        let x = randn(&[2, 3, 6, 5], rng);
        let w = randn(&[4, 3, 3, 3], rng);
        let y = conv2d(&x, &w, stride, pad).unwrap();
        let r = randn(y.shape(), rng);
        let (gx, gw) = conv2d_backward(&x, &w, &r, stride, pad).unwrap();
        let cx = pick(x.len(), n / 2, rng);
        let cw = pick(w.len(), n - n / 2, rng);
        check_coords(
            |t| project(&conv2d(t, &w, stride, pad).unwrap(), &r),
            &gx,
            &x,
            &cx,
        )
        .max(check_coords(
            |t| project(&conv2d(&x, t, stride, pad).unwrap(), &r),
            &gw,
            &w,
            &cw,
        ))
    })
}

pub fn gradcheck_batchnorm() -> f64 {
    over_points(4, 10, |rng, n| {
        let x = randn(&[5, 3, 2, 2], rng).map(|v| 1.5 * v + 0.3);
        let r = randn(x.shape(), rng);
        let mut bn = BatchNorm::new(3);
        bn.gamma.value = randn(&[3], rng);
        bn.beta.value = randn(&[3], rng);
        bn.forward(&x, Mode::Train).unwrap();
        let gx = bn.backward(&r).unwrap();
        let (gg, gb) = (bn.gamma.grad.clone(), bn.beta.grad.clone());
        let (gamma, beta) = (bn.gamma.value.clone(), bn.beta.value.clone());
        let run = |x: &Tensor, g: &Tensor, b: &Tensor| {
            let mut m = BatchNorm::new(3);
            m.gamma.value = g.clone();
            m.beta.value = b.clone();
            project(&m.forward(x, Mode::Train).unwrap(), &r)
        };
        let cx = pick(x.len(), n - 4, rng);
        let cg = pick(3, 2, rng);
        let cb = pick(3, 2, rng);
        let train = check_coords(|t| run(t, &gamma, &beta), &gx, &x, &cx)
            .max(check_coords(|t| run(&x, t, &beta), &gg, &gamma, &cg))
            .max(check_coords(|t| run(&x, &gamma, t), &gb, &beta, &cb));

        // eval mode: a fixed affine map per channel
        let mut ev = BatchNorm::new(3);
        ev.running_mean = randn(&[3], rng);
        ev.running_var = randn(&[3], rng).map(|v| v.abs() + 0.5);
        ev.forward(&x, Mode::Eval).unwrap();
        let gx_eval = ev.backward(&r).unwrap();
        let (rm, rv) = (ev.running_mean.clone(), ev.running_var.clone());
        let eval_run = |t: &Tensor| {
            let mut m = BatchNorm::new(3);
            m.running_mean = rm.clone();
            m.running_var = rv.clone();
            project(&m.forward(t, Mode::Eval).unwrap(), &r)
        };
        train.max(check_coords(eval_run, &gx_eval, &x, &pick(x.len(), 2, rng)))
    })
}

pub fn gradcheck_softmax_ce() -> f64 {
    over_points(5, 10, |rng, n| {
        let logits = randn(&[4, 5], rng).map(|v| 2.0 * v);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(5) as usize).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let c = pick(logits.len(), n, rng);
        check_coords(
            |t| softmax_cross_entropy(t, &labels).unwrap().0 as f64,
            &g,
            &logits,
            &c,
        )
    })
}

pub fn gradcheck_avgpool() -> f64 {
    over_points(6, 10, |rng, n| {
        let x = randn(&[2, 3, 4, 3], rng);
        let r = randn(&[2, 3], rng);
        let gx = global_avg_pool_backward(&r, x.shape()).unwrap();
        let c = pick(x.len(), n, rng);
        check_coords(|t| project(&global_avg_pool(t).unwrap(), &r), &gx, &x, &c)
    })
}

/// Unquantized PACT at points at least `3h` from both kinks.
pub fn gradcheck_pact() -> f64 {
    over_points(7, 10, |rng, n| {
        let alpha = 0.5 + 2.0 * rng.uniform() as f32;
        let mut x = randn(&[n.max(2)], rng).map(|v| 2.0 * v);
        let h = gradcheck_step(&x).max(gradcheck_step(&Tensor::scalar(alpha)));
        for v in x.data_mut() {
            while v.abs() < 3.0 * h || (*v - alpha).abs() < 3.0 * h {
                *v += 7.0 * h;
            }
        }
        let r = randn(x.shape(), rng);
        let (gx, ga) = pact_backward(&x, alpha, &r).unwrap();
        let coords: Vec<usize> = (0..n).map(|i| i % x.len()).collect();
        let ex = check_coords(
            |t| project(&pact_forward(t, alpha).unwrap(), &r),
            &gx,
            &x,
            &coords,
        );
        let a = Tensor::scalar(alpha);
        let ea = check_coords(
            |t| project(&pact_forward(&x, t.data()[0]).unwrap(), &r),
            &Tensor::scalar(ga),
            &a,
            &[0],
        );
        ex.max(ea)
    })
}

/// The three branches `x < 0`, `0 ≤ x < α`, `x ≥ α` of the straight-through
/// gradients, with and without activation quantization.
pub fn pact_branch_enumeration() -> Result<(), String> {
    let alpha = 1.5;
    let cases = [
        (-0.7f32, 0.0f32, 0.0f32),
        (0.0, 1.0, 0.0),
        (0.9, 1.0, 0.0),
        (1.5, 0.0, 1.0),
        (4.0, 0.0, 1.0),
    ];
    for quantize in [false, true] {
        for &(x, want_gx, want_ga) in &cases {
            let g = 0.37f32;
            let mut act = PactActivation::new(alpha, 2, 0.0, quantize).unwrap();
            act.forward(&Tensor::from_slice(&[x])).unwrap();
            let gx = act.backward(&Tensor::from_slice(&[g])).unwrap().data()[0];
            let ga = act.alpha.grad.data()[0];
            if gx != want_gx * g || ga != want_ga * g {
                return Err(format!(
                    "x={x} quantize={quantize}: got (gx={gx}, gα={ga}), want ({}, {})",
                    want_gx * g,
                    want_ga * g
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// single-neuron simulation regimes

pub struct LemmaOutcome {
    pub y_star: f32,
    pub converged_at: Option<usize>,
    pub w_moved_while_clipped: bool,
}

pub fn lemma_regime(y_star: f32) -> LemmaOutcome {
    let traj = lemma31_simulate(1.0, 2.0, 1.0, y_star, 0.1, 10_000).unwrap();
    let converged_at = traj.iter().position(|s| (s.y - y_star).abs() < 1e-3);
    let w_moved_while_clipped = traj
        .windows(2)
        .any(|p| p[0].x > p[0].alpha && p[1].w != p[0].w);
    LemmaOutcome {
        y_star,
        converged_at,
        w_moved_while_clipped,
    }
}
