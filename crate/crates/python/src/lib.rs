//! Python bindings for `bogo`.
//!
//! Structured results (fits, diagnostics, campaign state, suggestions) are
//! returned as plain dicts built from their JSON form.

use bogo::acquisition::{self, LinearEnsemble};
use bogo::campaign::{CampaignConfig, CampaignStore};
use bogo::diagnostics;
use bogo::hyperfit::{self, FitOptions};
use bogo::{GpPosterior, KernelFamily, KernelSpec, MeanSpec, TrainingSet};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(bogo_py, BogoError, PyException, "Error raised by the bogo core.");

fn to_py(err: bogo::Error) -> PyErr {
    BogoError::new_err(format!("[{}] {err}", err.kind()))
}

fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| BogoError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_dict<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| to_py(bogo::Error::InvalidConfig(e.to_string())))
}

fn family(kernel: &str, nu: Option<f64>) -> PyResult<KernelFamily> {
    match (kernel, nu) {
        ("squared_exponential" | "se", None) => Ok(KernelFamily::SquaredExponential),
        ("matern", Some(nu)) => Ok(KernelFamily::matern(nu)),
        ("matern", None) => Err(BogoError::new_err("matern needs nu")),
        (other, _) => Err(BogoError::new_err(format!("unknown kernel {other:?}"))),
    }
}

/// Stationary covariance function.
#[pyclass(name = "Kernel", module = "bogo_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernel {
    spec: KernelSpec,
}

#[pymethods]
impl PyKernel {
    /// `α exp(−Σ β_i (x_i − x'_i)²)`.
    #[staticmethod]
    fn squared_exponential(amplitude: f64, betas: Vec<f64>) -> PyResult<Self> {
        let spec = KernelSpec::squared_exponential(amplitude, betas).map_err(to_py)?;
        Ok(Self { spec })
    }

    /// Matérn with smoothness `nu` and per-dimension length scales.
    #[staticmethod]
    fn matern(amplitude: f64, length_scales: Vec<f64>, nu: f64) -> PyResult<Self> {
        let spec = KernelSpec::matern(amplitude, length_scales, nu).map_err(to_py)?;
        Ok(Self { spec })
    }

    fn __call__(&self, x: Vec<f64>, x2: Vec<f64>) -> PyResult<f64> {
        bogo::kernels::kernel_eval(&self.spec, &x, &x2).map_err(to_py)
    }

    #[getter]
    fn amplitude(&self) -> f64 {
        self.spec.amplitude
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.spec.betas.clone()
    }

    #[getter]
    fn family(&self) -> String {
        self.spec.family.label()
    }

    fn __repr__(&self) -> String {
        format!(
            "Kernel({}, amplitude={}, betas={:?})",
            self.spec.family.label(),
            self.spec.amplitude,
            self.spec.betas
        )
    }
}

/// Gaussian process posterior conditioned on a training set.
#[pyclass(name = "GaussianProcess", module = "bogo_py", frozen)]
struct PyGaussianProcess {
    post: GpPosterior,
}

#[pymethods]
impl PyGaussianProcess {
    #[new]
    #[pyo3(signature = (xs, ys, kernel, mean=0.0, noise_variance=0.0))]
    fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, kernel: &PyKernel, mean: f64, noise_variance: f64) -> PyResult<Self> {
        let training = TrainingSet::new(xs, ys, noise_variance).map_err(to_py)?;
        let post = GpPosterior::fit(training, kernel.spec.clone(), MeanSpec::constant(mean)).map_err(to_py)?;
        Ok(Self { post })
    }

    /// Posterior mean and variance at `x`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.post.predict(&x).map_err(to_py)
    }

    /// Joint posterior mean vector and covariance matrix.
    fn predict_joint(&self, points: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let joint = self.post.predict_joint(&points).map_err(to_py)?;
        let cov = joint.covariance.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok((joint.mean.iter().copied().collect(), cov))
    }

    fn log_marginal_likelihood(&self) -> f64 {
        self.post.log_marginal_likelihood()
    }

    /// Expected improvement over the best observation (noise-free only).
    fn expected_improvement(&self, x: Vec<f64>) -> PyResult<f64> {
        acquisition::ei_over_posterior(&self.post, &x).map_err(to_py)
    }

    /// KG factor of sampling `x` with candidate sets `a_n` and `a_next`.
    fn knowledge_gradient(&self, x: Vec<f64>, a_n: Vec<Vec<f64>>, a_next: Vec<Vec<f64>>) -> PyResult<f64> {
        acquisition::knowledge_gradient(&self.post, &x, &a_n, &a_next).map_err(to_py)
    }

    #[getter]
    fn kernel(&self) -> PyKernel {
        PyKernel {
            spec: self.post.kernel().clone(),
        }
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.post.noise_variance()
    }
}

/// `E[(N(mu, sigma²) − f_star)⁺]`.
#[pyfunction]
fn expected_improvement(mu: f64, sigma: f64, f_star: f64) -> f64 {
    acquisition::expected_improvement(mu, sigma, f_star)
}

/// `E[max_i (a_i + b_i Z)] − max_i a_i` for standard normal `Z`.
#[pyfunction]
fn expected_max_linear(intercepts: Vec<f64>, slopes: Vec<f64>) -> PyResult<f64> {
    let ens = LinearEnsemble::new(intercepts, slopes).map_err(to_py)?;
    Ok(acquisition::expected_max_linear(&ens))
}

/// Empirical-Bayes hyperparameters; returns the fit as a dict.
#[pyfunction]
#[pyo3(signature = (xs, ys, kernel="squared_exponential", nu=None, starts=16, seed=0, noise_free=false))]
#[allow(clippy::too_many_arguments)]
fn fit_hyperparameters<'py>(
    py: Python<'py>,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    kernel: &str,
    nu: Option<f64>,
    starts: usize,
    seed: u64,
    noise_free: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = FitOptions {
        starts,
        seed,
        noise_free,
        ..FitOptions::default()
    };
    let fit = hyperfit::fit_hyperparameters_with(&xs, &ys, family(kernel, nu)?, &opts).map_err(to_py)?;
    to_dict(py, &fit)
}

/// Leave-one-out report with empirical-Bayes hyperparameters.
#[pyfunction]
#[pyo3(signature = (xs, ys, kernel="squared_exponential", nu=None, noise_free=true, refit_per_fold=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn loo_diagnose<'py>(
    py: Python<'py>,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    kernel: &str,
    nu: Option<f64>,
    noise_free: bool,
    refit_per_fold: Option<bool>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let n = ys.len();
    // any positive λ² marks the data as noisy; its value is re-estimated
    let training = TrainingSet::new(xs, ys, if noise_free { 0.0 } else { 1.0 }).map_err(to_py)?;
    let refit = refit_per_fold.unwrap_or_else(|| diagnostics::default_refit_per_fold(n));
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    let report = diagnostics::loo_diagnose(&training, family(kernel, nu)?, refit, &opts).map_err(to_py)?;
    to_dict(py, &report)
}

/// Directory of persistent ask/tell campaigns.
#[pyclass(name = "CampaignStore", module = "bogo_py", frozen)]
struct PyCampaignStore {
    store: CampaignStore,
}

#[pymethods]
impl PyCampaignStore {
    #[new]
    fn new(root: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            store: CampaignStore::open(root).map_err(to_py)?,
        })
    }

    /// Creates a campaign from a config dict and returns its id.
    #[pyo3(signature = (config, id=None))]
    fn create(&self, config: &Bound<'_, PyAny>, id: Option<&str>) -> PyResult<String> {
        let config: CampaignConfig = from_dict(config)?;
        let state = match id {
            Some(id) => self.store.create_with_id(id, config),
            None => self.store.create(config),
        }
        .map_err(to_py)?;
        Ok(state.id)
    }

    fn ids(&self) -> PyResult<Vec<String>> {
        self.store.ids().map_err(to_py)
    }

    /// Next suggested design point as a dict.
    fn ask<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let sug = self.store.ask(id).map_err(to_py)?;
        to_dict(py, &sug)
    }

    /// Records an observation and returns the new revision.
    #[pyo3(signature = (id, x, y, tag=None, if_match=None))]
    fn tell(&self, id: &str, x: Vec<f64>, y: f64, tag: Option<String>, if_match: Option<u64>) -> PyResult<u64> {
        let state = self.store.tell(id, x, y, tag, if_match).map_err(to_py)?;
        Ok(state.revision)
    }

    /// Full campaign state as a dict.
    fn state<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let state = self.store.state(id).map_err(to_py)?;
        to_dict(py, &state)
    }

    /// Posterior slice rows along `axis`.
    #[pyo3(signature = (id, axis=0, resolution=100, slice=None))]
    fn curve<'py>(
        &self,
        py: Python<'py>,
        id: &str,
        axis: usize,
        resolution: usize,
        slice: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let rows = self.store.curve(id, axis, slice.as_deref(), resolution).map_err(to_py)?;
        to_dict(py, &rows)
    }

    #[pyo3(signature = (id, refit_per_fold=None))]
    fn diagnose<'py>(&self, py: Python<'py>, id: &str, refit_per_fold: Option<bool>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.store.diagnose(id, refit_per_fold).map_err(to_py)?;
        to_dict(py, &report)
    }
}

#[pymodule]
fn bogo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BogoError", m.py().get_type::<BogoError>())?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyGaussianProcess>()?;
    m.add_class::<PyCampaignStore>()?;
    m.add_function(wrap_pyfunction!(expected_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(expected_max_linear, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hyperparameters, m)?)?;
    m.add_function(wrap_pyfunction!(loo_diagnose, m)?)?;
    Ok(())
}
