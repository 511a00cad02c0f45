use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::QnnError;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// The six reference weight distributions used for calibration.
///
/// Parameters are fixed: Gaussian(0, 1); Uniform[−1, 1]; Laplace(0, b=1);
/// Logistic(0, s=1); symmetric Triangle on [−2, 2] with mode 0;
/// von Mises(μ=0, κ=4).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Distribution {
    Gaussian,
    Uniform,
    Laplace,
    Logistic,
    Triangle,
    VonMises,
}

const VON_MISES_KAPPA: f64 = 4.0;
const TRIANGLE_EXTREME: f64 = 2.0;

impl Distribution {
    /// Fixed calibration order.
    pub const ALL: [Distribution; 6] = [
        Distribution::Gaussian,
        Distribution::Uniform,
        Distribution::Laplace,
        Distribution::Logistic,
        Distribution::Triangle,
        Distribution::VonMises,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Uniform => "uniform",
            Distribution::Laplace => "laplace",
            Distribution::Logistic => "logistic",
            Distribution::Triangle => "triangle",
            Distribution::VonMises => "vonmises",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&d| d == self).unwrap()
    }

    /// One draw, computed in f64.
    pub fn draw(self, rng: &mut Rng) -> f64 {
        match self {
            Distribution::Gaussian => rng.normal(),
            Distribution::Uniform => 2.0 * rng.uniform() - 1.0,
            Distribution::Laplace => {
                let u = rng.uniform_open();
                if u < 0.5 {
                    (2.0 * u).ln()
                } else {
                    -(2.0 * (1.0 - u)).ln()
                }
            }
            Distribution::Logistic => {
                let u = rng.uniform_open();
                (u / (1.0 - u)).ln()
            }
            Distribution::Triangle => {
                let a = TRIANGLE_EXTREME;
                let u = rng.uniform();
                if u < 0.5 {
                    -a + (2.0 * a * a * u).sqrt()
                } else {
                    a - (2.0 * a * a * (1.0 - u)).sqrt()
                }
            }
            Distribution::VonMises => von_mises(rng, VON_MISES_KAPPA),
        }
    }
}

/// Best–Fisher rejection sampler for von Mises(0, κ) on (−π, π].
fn von_mises(rng: &mut Rng, kappa: f64) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1 = rng.uniform();
        let u2 = rng.uniform_open();
        let u3 = rng.uniform();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 < 0.5 { -theta } else { theta };
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = QnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Distribution::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| QnnError::Input(format!("unknown distribution `{s}`")))
    }
}

/// `n` i.i.d. samples as a 1-D tensor.
pub fn sample_distribution(dist: Distribution, n: usize, rng: &mut Rng) -> Tensor {
    assert!(n >= 1, "sample count must be at least 1");
    let data = (0..n).map(|_| dist.draw(rng) as f32).collect();
    Tensor::from_parts(vec![n], data)
}
