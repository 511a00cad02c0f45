use std::fmt::Write as _;

use crate::error::{QnnError, Result};

/// State after a step of the single-neuron simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaStep {
    /// 0 is the initial state.
    pub step: usize,
    pub w: f32,
    pub alpha: f32,
    pub x: f32,
    pub y: f32,
    pub loss: f32,
}

pub const LEMMA31_HEADER: &str = "step,w,alpha,x,y,loss";

fn state(step: usize, a: f32, w: f32, alpha: f32, y_star: f32) -> LemmaStep {
    let x = w * a;
    let y = x.clamp(0.0, alpha.max(0.0));
    LemmaStep {
        step,
        w,
        alpha,
        x,
        y,
        loss: 0.5 * (y_star - y) * (y_star - y),
    }
}

/// SGD on `x = w·a`, `y = clip(x, 0, α)`, `L = ½(y* − y)²`.
///
/// While `x > α` the output is pinned at `α`, so only `α` moves:
/// `α ← α − η(y − y*)`. Otherwise the neuron is an ordinary ReLU unit and
/// only `w` moves: `w ← w − η(y − y*)·a·[x > 0]`.
/// Returns `steps + 1` states, starting with the initial one.
pub fn lemma31_simulate(
    a: f32,
    w0: f32,
    alpha0: f32,
    y_star: f32,
    eta: f32,
    steps: usize,
) -> Result<Vec<LemmaStep>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(QnnError::Parameter(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let (mut w, mut alpha) = (w0, alpha0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state(0, a, w, alpha, y_star));
    for step in 1..=steps {
        let x = w * a;
        let y = x.clamp(0.0, alpha.max(0.0));
        let dy = y - y_star;
        if x > alpha {
            alpha -= eta * dy;
        } else if x > 0.0 {
            w -= eta * dy * a;
        }
        out.push(state(step, a, w, alpha, y_star));
    }
    Ok(out)
}

pub fn write_lemma31_csv(traj: &[LemmaStep]) -> String {
    let mut s = String::from(LEMMA31_HEADER);
    s.push('\n');
    for t in traj {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            t.step, t.w, t.alpha, t.x, t.y, t.loss
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_update_moves_alpha_only() {
        let t = lemma31_simulate(1.0, 2.0, 1.0, 3.0, 0.1, 1).unwrap();
        assert_eq!(t[1].w, 2.0);
        assert!((t[1].alpha - 1.2).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_eta() {
        assert!(lemma31_simulate(1.0, 2.0, 1.0, 3.0, 0.0, 1).is_err());
    }
}
