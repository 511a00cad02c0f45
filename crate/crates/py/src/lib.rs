//! Python bindings. Tensors cross the boundary as flat lists of floats.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qnn_core::harness;
use qnn_core::pact;
use qnn_core::sawb::{self, CalibrationTable, Distribution};
use qnn_core::{QnnError, Rng, Tensor};

fn err(e: QnnError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn t(v: Vec<f32>) -> Tensor {
    Tensor::from_slice(&v)
}

#[pyfunction]
fn pact_forward(x: Vec<f32>, alpha: f32) -> PyResult<Vec<f32>> {
    Ok(pact::pact_forward(&t(x), alpha).map_err(err)?.into_data())
}

/// Clips to `[0, α]` and quantizes to `bits` bits.
#[pyfunction]
fn pact_quantize(x: Vec<f32>, alpha: f32, bits: u32) -> PyResult<Vec<f32>> {
    if !(1..=pact::MAX_BITS).contains(&bits) {
        return Err(PyValueError::new_err(format!(
            "bits must be in 1..={}",
            pact::MAX_BITS
        )));
    }
    let y = pact::pact_forward(&t(x), alpha).map_err(err)?;
    Ok(pact::pact_quantize(&y, alpha, bits).into_data())
}

/// Returns `(grad_x, grad_alpha)`.
#[pyfunction]
fn pact_backward(x: Vec<f32>, alpha: f32, grad: Vec<f32>) -> PyResult<(Vec<f32>, f32)> {
    let (gx, ga) = pact::pact_backward(&t(x), alpha, &t(grad)).map_err(err)?;
    Ok((gx.into_data(), ga))
}

#[pyfunction]
fn bin_levels(n_bin: u32, alpha_w: f32) -> PyResult<Vec<f32>> {
    sawb::bin_levels(n_bin, alpha_w).map_err(err)
}

#[pyfunction]
fn quantize_weights(w: Vec<f32>, alpha_w: f32, n_bin: u32) -> PyResult<Vec<f32>> {
    Ok(sawb::quantize_weights(&t(w), alpha_w, n_bin)
        .map_err(err)?
        .into_data())
}

/// Returns `(alpha_star, mse_star)`.
#[pyfunction]
#[pyo3(signature = (w, n_bin, grid_size = sawb::DEFAULT_GRID_SIZE))]
fn optimal_alpha_search(w: Vec<f32>, n_bin: u32, grid_size: usize) -> PyResult<(f32, f32)> {
    let s = sawb::optimal_alpha_search(&t(w), n_bin, grid_size).map_err(err)?;
    Ok((s.alpha_star, s.mse_star))
}

#[pyfunction]
fn sample_distribution(name: &str, n: usize, seed: u64) -> PyResult<Vec<f32>> {
    let d: Distribution = name.parse().map_err(err)?;
    if n == 0 {
        return Err(PyValueError::new_err("n must be positive"));
    }
    Ok(sawb::sample_distribution(d, n, &mut Rng::new(seed, 0)).into_data())
}

/// Fits `(c1, c2)` for one `n_bin`; returns `(c1, c2, r_squared)`.
#[pyfunction]
#[pyo3(signature = (n_bin, n_samples = 100_000, seed = 0))]
fn calibrate(n_bin: u32, n_samples: usize, seed: u64) -> PyResult<(f32, f32, f32)> {
    let e = sawb::calibrate_coefficients(n_bin, n_samples, &Rng::new(seed, 0)).map_err(err)?;
    Ok((e.row.c1, e.row.c2, e.row.r_squared))
}

/// Built-in table as `[(n_bin, c1, c2), ...]`.
#[pyfunction]
fn builtin_table() -> Vec<(u32, f32, f32)> {
    CalibrationTable::builtin()
        .entries
        .values()
        .map(|r| (r.n_bin, r.c1, r.c2))
        .collect()
}

/// Trajectory as `[(step, w, alpha, x, y, loss), ...]`.
#[pyfunction]
fn lemma31_simulate(
    a: f32,
    w0: f32,
    alpha0: f32,
    y_star: f32,
    eta: f32,
    steps: usize,
) -> PyResult<Vec<(usize, f32, f32, f32, f32, f32)>> {
    Ok(harness::lemma31_simulate(a, w0, alpha0, y_star, eta, steps)
        .map_err(err)?
        .into_iter()
        .map(|s| (s.step, s.w, s.alpha, s.x, s.y, s.loss))
        .collect())
}

/// `[(alpha, clip_mse, quant_mse), ...]`.
#[pyfunction]
fn error_curves(x: Vec<f32>, alphas: Vec<f32>, k: u32) -> PyResult<Vec<(f32, f32, f32)>> {
    Ok(harness::error_curves(&t(x), &alphas, k)
        .map_err(err)?
        .into_iter()
        .map(|p| (p.alpha, p.clip_mse, p.quant_mse))
        .collect())
}

/// Runs a `qnn` command line; returns its exit code.
#[pyfunction]
fn run_command(args: Vec<String>) -> i32 {
    qnn_core::cli::run_command(std::iter::once("qnn".to_string()).chain(args))
}

#[pyclass(name = "SawbQuantizer", from_py_object)]
#[derive(Clone)]
struct PySawbQuantizer {
    inner: sawb::SawbQuantizer,
}

#[pymethods]
impl PySawbQuantizer {
    #[new]
    #[pyo3(signature = (n_bin, c1 = None, c2 = None))]
    fn new(n_bin: u32, c1: Option<f32>, c2: Option<f32>) -> PyResult<Self> {
        let inner = match (c1, c2) {
            (Some(c1), Some(c2)) => sawb::SawbQuantizer::new(n_bin, c1, c2),
            (None, None) => sawb::SawbQuantizer::from_table(&CalibrationTable::builtin(), n_bin),
            _ => return Err(PyValueError::new_err("give both c1 and c2, or neither")),
        }
        .map_err(err)?;
        Ok(PySawbQuantizer { inner })
    }

    #[getter]
    fn n_bin(&self) -> u32 {
        self.inner.n_bin
    }

    #[getter]
    fn coefficients(&self) -> (f32, f32) {
        (self.inner.c1, self.inner.c2)
    }

    fn scale(&self, w: Vec<f32>) -> PyResult<f32> {
        self.inner.scale(&t(w)).map_err(err)
    }

    /// Returns `(quantized, alpha_w)`.
    fn quantize(&self, w: Vec<f32>) -> PyResult<(Vec<f32>, f32)> {
        let (q, a) = self.inner.quantize(&t(w)).map_err(err)?;
        Ok((q.into_data(), a))
    }

    fn __repr__(&self) -> String {
        format!(
            "SawbQuantizer(n_bin={}, c1={}, c2={})",
            self.inner.n_bin, self.inner.c1, self.inner.c2
        )
    }
}

#[pyclass(name = "PactActivation")]
struct PyPactActivation {
    inner: pact::PactActivation,
}

#[pymethods]
impl PyPactActivation {
    #[new]
    #[pyo3(signature = (bits, alpha = pact::DEFAULT_ALPHA_INIT, reg_lambda = pact::DEFAULT_REG_LAMBDA, quantize = true))]
    fn new(bits: u32, alpha: f32, reg_lambda: f32, quantize: bool) -> PyResult<Self> {
        let inner = pact::PactActivation::new(alpha, bits, reg_lambda, quantize).map_err(err)?;
        Ok(PyPactActivation { inner })
    }

    #[getter]
    fn alpha(&self) -> f32 {
        self.inner.alpha_value()
    }

    #[getter]
    fn alpha_grad(&self) -> f32 {
        self.inner.alpha.grad.data()[0]
    }

    fn forward(&mut self, x: Vec<f32>) -> PyResult<Vec<f32>> {
        Ok(self.inner.forward(&t(x)).map_err(err)?.into_data())
    }

    fn backward(&mut self, grad: Vec<f32>) -> PyResult<Vec<f32>> {
        Ok(self.inner.backward(&t(grad)).map_err(err)?.into_data())
    }

    /// Plain SGD on α with the L2 term, then the floor clamp.
    fn step(&mut self, lr: f32) {
        self.inner.apply_regularizer();
        qnn_core::ops::sgd_momentum_step(&mut self.inner.alpha, lr, 0.0, 0.0);
        self.inner.clamp_alpha();
    }
}

#[pymodule]
fn qnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pact_forward, m)?)?;
    m.add_function(wrap_pyfunction!(pact_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(pact_backward, m)?)?;
    m.add_function(wrap_pyfunction!(bin_levels, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_alpha_search, m)?)?;
    m.add_function(wrap_pyfunction!(sample_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_table, m)?)?;
    m.add_function(wrap_pyfunction!(lemma31_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(error_curves, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add_class::<PySawbQuantizer>()?;
    m.add_class::<PyPactActivation>()?;
    Ok(())
}
