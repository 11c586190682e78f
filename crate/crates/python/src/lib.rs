//! Python bindings for the spde-lab core.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use spde_lab_core::bounds::{run_battery, BoundReport};
use spde_lab_core::diagnostics::{self, Direction, HolderSpec};
use spde_lab_core::experiment::{self, ExperimentConfig};
use spde_lab_core::solver::PathResult;
use spde_lab_core::{GridFunction, LabError};

fn err(e: LabError) -> PyErr {
    match e {
        LabError::Domain(_) | LabError::Config(_) | LabError::Contract(_) => PyValueError::new_err(e.to_string()),
        LabError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Converts through JSON so nested records arrive as plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn report_dict<'py>(py: Python<'py>, r: &BoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lemma_id", r.lemma_id.to_string())?;
    d.set_item("params", r.params.clone())?;
    d.set_item("lhs", r.lhs)?;
    d.set_item("rhs_bound", r.rhs_bound)?;
    d.set_item("margin", r.margin)?;
    d.set_item("quadrature_error", r.quadrature_error)?;
    d.set_item("constant", r.constant)?;
    d.set_item("constant_source", r.constant_source.to_string())?;
    d.set_item("verdict", r.verdict().to_string())?;
    Ok(d)
}

/// Dirichlet heat kernel on [0, 1].
#[pyclass(name = "HeatKernel", frozen)]
struct PyHeatKernel(spde_lab_core::HeatKernel);

#[pymethods]
impl PyHeatKernel {
    #[new]
    #[pyo3(signature = (switch_time=None, tail_tol=None))]
    fn new(switch_time: Option<f64>, tail_tol: Option<f64>) -> Self {
        let mut k = spde_lab_core::HeatKernel::default();
        if let Some(s) = switch_time {
            k.switch_time = s;
        }
        if let Some(t) = tail_tol {
            k.tail_tol = t;
        }
        PyHeatKernel(k)
    }

    fn eval(&self, t: f64, x: f64, y: f64) -> PyResult<f64> {
        self.0.eval(t, x, y).map_err(err)
    }

    fn spectral(&self, t: f64, x: f64, y: f64) -> PyResult<f64> {
        self.0.spectral(t, x, y).map_err(err)
    }

    fn image_charge(&self, t: f64, x: f64, y: f64) -> PyResult<f64> {
        self.0.image_charge(t, x, y).map_err(err)
    }

    /// `(value, error)` of the surviving mass at `x`.
    fn kernel_mass(&self, t: f64, x: f64) -> PyResult<(f64, f64)> {
        let e = self.0.kernel_mass(t, x).map_err(err)?;
        Ok((e.value, e.error))
    }

    /// Semigroup applied to values on a uniform closed grid.
    fn apply(&self, values: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        let f = GridFunction::new(values).map_err(err)?;
        Ok(self.0.apply_semigroup(&f, t).map_err(err)?.values.values)
    }

    /// Runs the default bound battery; one dict per report.
    fn verify<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let k = self.0;
        let reports = py.detach(|| run_battery(&k)).map_err(err)?;
        reports.iter().map(|r| report_dict(py, r)).collect()
    }
}

/// One simulated path.
#[pyclass(name = "Path", frozen)]
struct PyPath(PathResult);

#[pymethods]
impl PyPath {
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.0.config_hash.clone()
    }

    #[getter]
    fn blew_up(&self) -> bool {
        self.0.record.blew_up
    }

    #[getter]
    fn tau_hat(&self) -> f64 {
        self.0.record.tau_hat
    }

    #[getter]
    fn max_halvings(&self) -> u32 {
        self.0.max_halvings
    }

    #[getter]
    fn record(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.record)
    }

    /// `(t, sup, l2, h1, bg_mode)` rows.
    #[getter]
    fn series(&self) -> Vec<(f64, f64, f64, f64, f64)> {
        self.0.series.iter().map(|r| (r.t, r.sup, r.l2, r.h1, r.bg_mode)).collect()
    }

    /// Interior values at the final time, if the path did not blow up.
    #[getter]
    fn final_field(&self) -> Option<Vec<f64>> {
        self.0.final_field.as_ref().map(|f| f.values.clone())
    }

    /// `(time, interior values)` pairs.
    #[getter]
    fn snapshots(&self) -> Vec<(f64, Vec<f64>)> {
        self.0.snapshots.iter().map(|f| (f.time, f.values.clone())).collect()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!("Path(seed={}, blew_up={}, tau_hat={})", self.0.seed, self.0.record.blew_up, self.0.record.tau_hat)
    }
}

/// Ensemble configuration.
#[pyclass(name = "Config", frozen)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml_str(text).map(PyConfig).map_err(err)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::from_file(&path).map(PyConfig).map_err(err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml_string().map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.0.config_hash()
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.0.n_paths
    }

    #[getter]
    fn seed_base(&self) -> u64 {
        self.0.seed_base
    }

    fn seed(&self, index: usize) -> u64 {
        self.0.seed(index)
    }

    /// Copy with one parameter replaced; see `experiment::AXES`.
    fn with_axis(&self, axis: &str, value: f64) -> PyResult<Self> {
        self.0.with_axis(axis, value).map(PyConfig).map_err(err)
    }

    fn with_outputs(&self, dir: PathBuf) -> Self {
        let mut c = self.0.clone();
        c.outputs = dir;
        PyConfig(c)
    }

    fn simulate(&self, py: Python<'_>, index: usize) -> PyResult<PyPath> {
        py.detach(|| self.0.simulate_path(index)).map(PyPath).map_err(err)
    }

    fn simulate_seed(&self, py: Python<'_>, seed: u64) -> PyResult<PyPath> {
        py.detach(|| self.0.simulate_seed(seed)).map(PyPath).map_err(err)
    }

    /// All paths in memory, without touching the output directory.
    #[pyo3(signature = (jobs=None))]
    fn ensemble(&self, py: Python<'_>, jobs: Option<usize>) -> PyResult<Vec<PyPath>> {
        let jobs = experiment::resolve_jobs(jobs);
        let paths = py.detach(|| experiment::simulate_ensemble(&self.0, jobs)).map_err(err)?;
        Ok(paths.into_iter().map(PyPath).collect())
    }

    /// Runs to the output directory (resuming if possible); returns the summary.
    #[pyo3(signature = (jobs=None))]
    fn run(&self, py: Python<'_>, jobs: Option<usize>) -> PyResult<Py<PyAny>> {
        let jobs = experiment::resolve_jobs(jobs);
        let outcome = py.detach(|| experiment::run(&self.0, jobs)).map_err(err)?;
        to_py(py, &outcome.summary)
    }

    #[pyo3(signature = (axis, values, jobs=None))]
    fn sweep(&self, py: Python<'_>, axis: &str, values: Vec<f64>, jobs: Option<usize>) -> PyResult<Py<PyAny>> {
        let jobs = experiment::resolve_jobs(jobs);
        let result = py.detach(|| experiment::sweep(&self.0, axis, &values, jobs)).map_err(err)?;
        to_py(py, &result)
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={}, n_paths={})", self.0.config_hash(), self.0.n_paths)
    }
}

fn unwrap_paths(paths: Vec<PyRef<'_, PyPath>>) -> Vec<PathResult> {
    paths.iter().map(|p| p.0.clone()).collect()
}

#[pyfunction]
fn lyapunov_value(r: f64) -> PyResult<f64> {
    diagnostics::lyapunov_value(r).map_err(err)
}

/// Log-Sobolev check for values on a closed uniform grid vanishing at both ends.
#[pyfunction]
fn log_sobolev_check<'py>(py: Python<'py>, values: Vec<f64>, epsilon: f64) -> PyResult<Bound<'py, PyDict>> {
    let h = GridFunction::new(values).map_err(err)?;
    report_dict(py, &diagnostics::log_sobolev_check(&h, epsilon).map_err(err)?)
}

#[pyfunction]
fn moment_norm(py: Python<'_>, paths: Vec<PyRef<'_, PyPath>>, beta: f64, k: f64) -> PyResult<Py<PyAny>> {
    let ens = unwrap_paths(paths);
    to_py(py, &diagnostics::moment_norm_estimate(&ens, beta, k).map_err(err)?)
}

#[pyfunction]
fn gaussian_moment_fit(py: Python<'_>, paths: Vec<PyRef<'_, PyPath>>, ks: Vec<f64>) -> PyResult<Py<PyAny>> {
    let ens = unwrap_paths(paths);
    to_py(py, &diagnostics::gaussian_moment_fit(&ens, &ks).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (paths, direction, lags, k=2.0, t_star=0.5, alpha=1.0))]
fn holder_fit(
    py: Python<'_>,
    paths: Vec<PyRef<'_, PyPath>>,
    direction: &str,
    lags: Vec<f64>,
    k: f64,
    t_star: f64,
    alpha: f64,
) -> PyResult<Py<PyAny>> {
    let direction: Direction = direction.parse().map_err(err)?;
    let ens = unwrap_paths(paths);
    let spec = HolderSpec {
        direction,
        k,
        t_star,
        lags,
        alpha,
    };
    to_py(py, &diagnostics::holder_fit(&ens, &spec).map_err(err)?)
}

/// Reads one path JSONL file; returns `(header, path)`.
#[pyfunction]
fn read_path(py: Python<'_>, file: PathBuf) -> PyResult<(Py<PyAny>, PyPath)> {
    let (header, path) = experiment::read_path_file(&file).map_err(err)?;
    Ok((to_py(py, &header)?, PyPath(path)))
}

/// Summary over all path files matching a glob.
#[pyfunction]
fn aggregate(py: Python<'_>, pattern: &str) -> PyResult<Py<PyAny>> {
    let summary = py.detach(|| experiment::aggregate(pattern)).map_err(err)?;
    to_py(py, &summary)
}

#[pymodule]
fn spde_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMA_VERSION", spde_lab_core::SCHEMA_VERSION)?;
    m.add_class::<PyHeatKernel>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPath>()?;
    m.add_function(wrap_pyfunction!(lyapunov_value, m)?)?;
    m.add_function(wrap_pyfunction!(log_sobolev_check, m)?)?;
    m.add_function(wrap_pyfunction!(moment_norm, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_moment_fit, m)?)?;
    m.add_function(wrap_pyfunction!(holder_fit, m)?)?;
    m.add_function(wrap_pyfunction!(read_path, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    Ok(())
}
