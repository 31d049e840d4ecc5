//! Python bindings. Images cross the boundary as `Image` objects holding a
//! flat row-major list of intensities; everything else is plain numbers,
//! lists and dicts.

use anova_denoise::bilevel::{self, try_brent_minimize, BilevelError, BrentConfig, TrainingSet};
use anova_denoise::config::RunConfig;
use anova_denoise::imaging::{self, GrayImage, NoiseSpec};
use anova_denoise::kernel::{AnovaOperator, KernelConfig, KernelMode, KernelOp};
use anova_denoise::linops::{self, PrecKind, ShiftedSystem, SolverConfig};
use anova_denoise::spectral;
use anova_denoise::transform::{gauss_transform_direct, FastsumParams, FastsumPlan};
use anova_denoise::{cli, kernel};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

pub fn parse_mode(mode: &str) -> Result<KernelMode, String> {
    match mode {
        "fast" => Ok(KernelMode::Fast),
        "exact" => Ok(KernelMode::Exact),
        _ => Err(format!("unknown kernel mode {mode:?} (expected \"fast\" or \"exact\")")),
    }
}

pub fn kernel_config(sigma: f64, rho: usize, bins: usize, mode: &str) -> Result<KernelConfig, String> {
    Ok(KernelConfig {
        rho,
        bins,
        sigma,
        mode: parse_mode(mode)?,
        ..KernelConfig::default()
    })
}

pub fn solver_config(prec: &str, tol: f64, maxit: usize) -> Result<SolverConfig, String> {
    Ok(SolverConfig {
        prec: prec.parse::<PrecKind>()?,
        tol,
        maxit,
        ..SolverConfig::default()
    })
}

/// Grayscale image on the 0..255 scale.
#[pyclass(name = "Image", module = "anova_denoise", from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: GrayImage,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, pixels: Vec<f64>) -> PyResult<Self> {
        GrayImage::new(height, width, pixels).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn pixels(&self) -> Vec<f64> {
        self.inner.pixels().to_vec()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn resize(&self, height: usize, width: usize) -> PyResult<Self> {
        self.inner.resize(height, width).map(|inner| Self { inner }).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

#[pyfunction]
fn load_pgm(path: &str) -> PyResult<PyImage> {
    imaging::load_image(path)
        .map(|inner| PyImage { inner })
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pyfunction]
fn save_pgm(image: &PyImage, path: &str) -> PyResult<()> {
    imaging::save_image(&image.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pyfunction]
fn synthetic_scene(height: usize, width: usize) -> PyImage {
    PyImage {
        inner: imaging::synthetic_scene(height, width),
    }
}

#[pyfunction]
#[pyo3(signature = (image, stddev, seed=0))]
fn add_noise(image: &PyImage, stddev: f64, seed: u64) -> PyImage {
    PyImage {
        inner: imaging::add_gaussian_noise(&image.inner, NoiseSpec { stddev, seed }),
    }
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    imaging::ssim(&a.inner, &b.inner).map_err(value_err)
}

#[pyfunction]
fn mse(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    imaging::mse(&a.inner, &b.inner).map_err(value_err)
}

/// `g_i = Σ_j α_j exp(-‖x_i - y_j‖² / σ²)` for flat row-major point lists.
#[pyfunction]
#[pyo3(signature = (dim, sources, targets, alpha, sigma, fast=true))]
fn gauss_transform(
    py: Python<'_>,
    dim: usize,
    sources: Vec<f64>,
    targets: Vec<f64>,
    alpha: Vec<f64>,
    sigma: f64,
    fast: bool,
) -> PyResult<Vec<f64>> {
    if dim == 0 || sources.len() != alpha.len() * dim || targets.len() % dim != 0 {
        return Err(PyValueError::new_err("point lists do not match dim and alpha"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PyValueError::new_err("sigma must be positive"));
    }
    let shape = 1.0 / (sigma * sigma);
    py.detach(|| {
        if fast {
            FastsumPlan::new(dim, &sources, Some(&targets), shape, &FastsumParams::default())
                .and_then(|p| p.apply(&alpha))
                .map_err(value_err)
        } else {
            Ok(gauss_transform_direct(dim, &sources, &targets, &alpha, shape))
        }
    })
}

/// Matrix-free ANOVA kernel `Γ` built from an image.
#[pyclass(name = "Kernel", module = "anova_denoise")]
pub struct PyKernel {
    op: AnovaOperator,
    config: KernelConfig,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (image, sigma=30.0, rho=3, bins=16, mode="fast"))]
    fn new(py: Python<'_>, image: &PyImage, sigma: f64, rho: usize, bins: usize, mode: &str) -> PyResult<Self> {
        let config = kernel_config(sigma, rho, bins, mode).map_err(PyValueError::new_err)?;
        let img = image.inner.clone();
        let op = py.detach(|| config.build(&img)).map_err(value_err)?;
        Ok(Self { op, config })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.op.dim()
    }

    #[getter]
    fn num_windows(&self) -> usize {
        self.op.num_windows()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.config.sigma
    }

    /// `Γv`.
    fn apply(&self, py: Python<'_>, v: Vec<f64>) -> PyResult<Vec<f64>> {
        py.detach(|| self.op.apply(&v)).map_err(value_err)
    }

    /// `Lv = diag(η)v - Γv`.
    fn laplacian(&self, py: Python<'_>, v: Vec<f64>) -> PyResult<Vec<f64>> {
        py.detach(|| linops::laplacian_apply(&self.op, &v)).map_err(value_err)
    }

    /// `η = Γ1`.
    fn degree(&self) -> Vec<f64> {
        self.op.degree().to_vec()
    }

    /// Solves `(λI + μL)u = λf`; returns a dict with `pixels`, `iterations`,
    /// `relative_residual` and `converged`.
    #[pyo3(signature = (image, lam, mu=1e-2, prec="deflated-jacobi", tol=1e-10, maxit=25))]
    fn denoise<'py>(
        &self,
        py: Python<'py>,
        image: &PyImage,
        lam: f64,
        mu: f64,
        prec: &str,
        tol: f64,
        maxit: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = solver_config(prec, tol, maxit).map_err(PyValueError::new_err)?;
        let f = image.inner.pixels();
        let r = py
            .detach(|| {
                let sys = ShiftedSystem::new(lam, mu, &self.op)?;
                linops::solve(&sys, f, &cfg)
            })
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("image", PyImage {
            inner: image.inner.with_pixels(r.x.clone()).map_err(value_err)?,
        })?;
        d.set_item("pixels", r.x)?;
        d.set_item("iterations", r.iterations)?;
        d.set_item("relative_residual", r.relative_residual)?;
        d.set_item("converged", r.converged)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Kernel(n={}, windows={}, sigma={})",
            self.op.dim(),
            self.op.num_windows(),
            self.config.sigma
        )
    }
}

/// One-shot denoising: builds the kernel and solves.
#[pyfunction]
#[pyo3(signature = (image, lam, mu=1e-2, sigma=30.0, rho=3, prec="deflated-jacobi", tol=1e-10, maxit=25, mode="fast"))]
#[allow(clippy::too_many_arguments)]
fn denoise<'py>(
    py: Python<'py>,
    image: &PyImage,
    lam: f64,
    mu: f64,
    sigma: f64,
    rho: usize,
    prec: &str,
    tol: f64,
    maxit: usize,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let k = PyKernel::new(py, image, sigma, rho, 16, mode)?;
    k.denoise(py, image, lam, mu, prec, tol, maxit)
}

/// Dense spectral bounds for a small image (`n ≤ dense_limit`).
#[pyfunction]
#[pyo3(signature = (image, lam, mu=1e-2, sigma=30.0, rho=3, dense_limit=kernel::DEFAULT_DENSE_LIMIT))]
fn spectral_bounds<'py>(
    py: Python<'py>,
    image: &PyImage,
    lam: f64,
    mu: f64,
    sigma: f64,
    rho: usize,
    dense_limit: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = kernel_config(sigma, rho, 16, "exact").map_err(PyValueError::new_err)?;
    let img = image.inner.clone();
    let r = py
        .detach(|| {
            let k = cfg.build_dense(&img, dense_limit).map_err(|e| e.to_string())?;
            spectral::bounds_report(&k, lam, mu).map_err(|e| e.to_string())
        })
        .map_err(PyValueError::new_err)?;
    let d = PyDict::new(py);
    d.set_item("n", r.n)?;
    d.set_item("rho_l", r.rho_l)?;
    d.set_item("a_l", r.a_l)?;
    d.set_item("rho_a", r.rho_a)?;
    d.set_item("a_a", r.a_a)?;
    d.set_item("max_eta", r.max_eta)?;
    d.set_item("min_eta", r.min_eta)?;
    d.set_item("condition_number", r.condition_number())?;
    d.set_item("in_working_range", r.in_working_range())?;
    d.set_item("all_passed", r.all_passed())?;
    d.set_item("failures", r.failures().iter().map(|c| c.name.clone()).collect::<Vec<_>>())?;
    d.set_item("spectrum_a", r.spectrum_a)?;
    Ok(d)
}

/// Brent minimization of a Python callable on `[a, b]`.
#[pyfunction]
#[pyo3(signature = (f, a, b, tol=1e-10, maxit=100))]
fn brent_minimize<'py>(py: Python<'py>, f: Bound<'py, PyAny>, a: f64, b: f64, tol: f64, maxit: usize) -> PyResult<Bound<'py, PyDict>> {
    let mut failure: Option<PyErr> = None;
    let result = try_brent_minimize(
        |x| match f.call1((x,)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => Ok(v),
            Err(e) => {
                failure = Some(e);
                Err(BilevelError::NonFinite { x })
            }
        },
        a,
        b,
        tol,
        maxit,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let r = result.map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("x", r.x)?;
    d.set_item("fx", r.fx)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("evaluations", r.evaluations)?;
    d.set_item("converged", r.converged)?;
    Ok(d)
}

/// Learns `λ` on `(clean, noisy)` pairs; returns the training report as a dict.
#[pyfunction]
#[pyo3(signature = (pairs, mu=1e-2, lambda_min=1e-9, lambda_max=3.0, sigma=30.0, rho=3, tol=1e-10, mode="fast"))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    pairs: Vec<(PyImage, PyImage)>,
    mu: f64,
    lambda_min: f64,
    lambda_max: f64,
    sigma: f64,
    rho: usize,
    tol: f64,
    mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let kc = kernel_config(sigma, rho, 16, mode).map_err(PyValueError::new_err)?;
    let images: Vec<(GrayImage, GrayImage)> = pairs.into_iter().map(|(c, n)| (c.inner, n.inner)).collect();
    let report = py
        .detach(|| {
            let ts = TrainingSet::build(images, &kc, mu, (lambda_min, lambda_max))?;
            bilevel::train(&ts, &SolverConfig::default(), &BrentConfig { tol, ..BrentConfig::default() })
        })
        .map_err(runtime_err)?;
    json_to_py(py, &serde_json::to_string(&report).map_err(runtime_err)?)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Runs one CLI command from a JSON configuration; raises on failure.
#[pyfunction]
fn run(py: Python<'_>, config_json: &str) -> PyResult<()> {
    let cfg = RunConfig::from_json(config_json).map_err(value_err)?;
    py.detach(|| cli::run(&cfg)).map_err(|e| match e.exit_code() {
        2 => value_err(e),
        3 => PyIOError::new_err(e.to_string()),
        _ => runtime_err(e),
    })
}

#[pymodule]
#[pyo3(name = "anova_denoise")]
fn anova_denoise_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(load_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(save_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_scene, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_transform, m)?)?;
    m.add_function(wrap_pyfunction!(denoise, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(brent_minimize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_parsing() {
        assert_eq!(parse_mode("exact").unwrap(), KernelMode::Exact);
        assert!(parse_mode("slow").is_err());
        let s = solver_config("deflated-l2", 1e-8, 30).unwrap();
        assert_eq!((s.prec, s.maxit), (PrecKind::DeflatedL2, 30));
        assert!(solver_config("ilu", 1e-8, 30).is_err());
        assert_eq!(kernel_config(40.0, 2, 8, "fast").unwrap().sigma, 40.0);
    }
}
