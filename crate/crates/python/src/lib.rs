//! Python bindings: datasets, run configuration, the cross-validated
//! experiment, the linear solvers, feature elimination and metrics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use updrs_core::config::RunConfig;
use updrs_core::dataset::{canonical_header, load_csv, write_csv, Dataset, SUBJECT};
use updrs_core::eval::{self, render_report, CvReport, Method, MethodSummary, ReportFormat};
use updrs_core::forest::ForestParams;
use updrs_core::nn::gradcheck::random_instance;
use updrs_core::nn::grad_check;
use updrs_core::{optimize, rfe, synth, Matrix, RandomSource};

fn py_err(e: updrs_core::Error) -> PyErr {
    if e.is_usage() || matches!(e, updrs_core::Error::Shape(_) | updrs_core::Error::Parameter(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

/// Telemonitoring recordings.
#[pyclass(name = "Dataset", module = "updrs")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_csv(path).map_err(py_err)?,
        })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| py_err(updrs_core::Error::io(path, e)))?;
        write_csv(&self.inner, std::io::BufWriter::new(file)).map_err(|e| py_err(updrs_core::Error::io(path, e)))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} records, {} subjects)", self.inner.len(), self.inner.subject_count())
    }

    #[getter]
    fn subject_count(&self) -> usize {
        self.inner.subject_count()
    }

    #[getter]
    fn columns(&self) -> Vec<&'static str> {
        canonical_header()
    }

    /// Values of one column, in record order.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        if name == SUBJECT {
            return Ok(self.inner.subject_ids().into_iter().map(f64::from).collect());
        }
        self.inner
            .records
            .iter()
            .map(|r| r.get(name).ok_or_else(|| PyValueError::new_err(format!("unknown column {name:?}"))))
            .collect()
    }
}

/// Run configuration. Every field is reachable through TOML; the common
/// ones also have properties.
#[pyclass(name = "RunConfig", module = "updrs")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml_str(t).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: RunConfig::from_file(path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }
    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.train.epochs = v;
    }

    #[getter]
    fn k_folds(&self) -> usize {
        self.inner.k_folds
    }
    #[setter]
    fn set_k_folds(&mut self, v: usize) {
        self.inner.k_folds = v;
    }

    #[getter]
    fn max_rows(&self) -> Option<usize> {
        self.inner.max_rows
    }
    #[setter]
    fn set_max_rows(&mut self, v: Option<usize>) {
        self.inner.max_rows = v;
    }

    #[getter]
    fn rfe_k(&self) -> usize {
        self.inner.rfe_k
    }
    #[setter]
    fn set_rfe_k(&mut self, v: usize) {
        self.inner.rfe_k = v;
    }

    #[getter]
    fn units(&self) -> usize {
        self.inner.net.units
    }
    #[setter]
    fn set_units(&mut self, v: usize) {
        self.inner.net.units = v;
    }

    #[getter]
    fn data(&self) -> Option<String> {
        self.inner.data.clone()
    }
    #[setter]
    fn set_data(&mut self, v: Option<String>) {
        self.inner.data = v;
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &MethodSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", s.method.label())?;
    for (k, v) in [
        ("train_mse", s.train_mse),
        ("val_mse", s.val_mse),
        ("test_mse", s.test_mse),
        ("test_r2", s.test_r2),
    ] {
        d.set_item(k, v.mean)?;
        d.set_item(format!("{k}_std"), v.std)?;
    }
    Ok(d)
}

/// Cross-validation report.
#[pyclass(name = "Report", module = "updrs")]
struct PyReport {
    inner: CvReport,
}

#[pymethods]
impl PyReport {
    /// One dict per method: fold means plus `*_std` sample deviations.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.summary.iter().map(|s| summary_dict(py, s)).collect()
    }

    fn test_mse(&self, method: &str) -> PyResult<f64> {
        let m = Method::from_label(method).ok_or_else(|| PyValueError::new_err(format!("unknown method {method:?}")))?;
        Ok(self.inner.summary_for(m).expect("every method is summarized").test_mse.mean)
    }

    fn to_json(&self) -> PyResult<String> {
        render_report(&self.inner, ReportFormat::Json).map_err(py_err)
    }

    fn to_csv(&self) -> PyResult<String> {
        render_report(&self.inner, ReportFormat::Csv).map_err(py_err)
    }

    fn mse_table(&self) -> String {
        eval::mse_table(&self.inner)
    }

    fn r2_table(&self) -> String {
        eval::r2_table(&self.inner)
    }

    /// Normalization audit over every forward pass of the run.
    fn audit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = &self.inner.audit;
        let d = PyDict::new(py);
        d.set_item("forward_passes", a.forward_passes)?;
        d.set_item("attention_checks", a.attention_checks)?;
        d.set_item("attention_violations", a.attention_violations)?;
        d.set_item("max_attention_sum_error", a.max_attention_sum_error)?;
        d.set_item("bn_checks", a.bn_checks)?;
        d.set_item("max_bn_batch_mean", a.max_bn_batch_mean)?;
        Ok(d)
    }

    /// Features kept by feature elimination in each fold.
    fn selected_features(&self) -> Vec<Vec<String>> {
        self.inner.folds.iter().map(|f| f.selected_features.clone()).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.inner.metadata.notes.clone()
    }
}

#[pyfunction]
#[pyo3(signature = (records = 5875, subjects = 42, seed = 0))]
fn synthesize(records: usize, subjects: usize, seed: u64) -> PyResult<PyDataset> {
    let inner = synth::generate(&synth::SynthConfig { subjects, records, seed }).map_err(py_err)?;
    Ok(PyDataset { inner })
}

/// Full pipeline. Without `dataset` the CSV named by the config (or
/// `$UPDRS_DATA`) is loaded.
#[pyfunction]
#[pyo3(signature = (config, dataset = None))]
fn run_experiment(py: Python<'_>, config: &PyRunConfig, dataset: Option<&PyDataset>) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let ds = dataset.map(|d| d.inner.clone());
    let r = py.detach(move || match ds {
        Some(ds) => eval::run_experiment_on(&cfg, &ds),
        None => eval::run_experiment(&cfg),
    });
    Ok(PyReport { inner: r.map_err(py_err)? })
}

/// The four linear baselines only; one dict per method.
#[pyfunction]
fn run_baselines<'py>(py: Python<'py>, config: &PyRunConfig, dataset: &PyDataset) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (cfg, ds) = (config.inner.clone(), dataset.inner.clone());
    let s = py.detach(move || eval::run_baselines_on(&cfg, &ds)).map_err(py_err)?;
    s.iter().map(|m| summary_dict(py, m)).collect()
}

#[pyfunction]
fn mse(y: Vec<f64>, y_hat: Vec<f64>) -> PyResult<f64> {
    eval::mse(&y, &y_hat).map_err(py_err)
}

#[pyfunction]
fn r2(y: Vec<f64>, y_hat: Vec<f64>) -> PyResult<f64> {
    eval::r2(&y, &y_hat).map_err(py_err)
}

#[pyfunction]
fn solve_lls(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Vec<f64>> {
    optimize::solve_lls(&to_matrix(x)?, &y).map_err(py_err)
}

/// Returns `(x, iterations, relative residual)`.
#[pyfunction]
#[pyo3(signature = (a, b, tol = 1e-10, max_iter = 1000))]
fn solve_cg(a: Vec<Vec<f64>>, b: Vec<f64>, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, usize, f64)> {
    let s = optimize::solve_cg(&to_matrix(a)?, &b, tol, max_iter).map_err(py_err)?;
    Ok((s.x, s.iterations, s.rel_residual))
}

#[pyfunction]
#[pyo3(signature = (x, y, lam, intercept_col = None))]
fn solve_ridge(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64, intercept_col: Option<usize>) -> PyResult<Vec<f64>> {
    optimize::solve_ridge(&to_matrix(x)?, &y, lam, intercept_col).map_err(py_err)
}

/// Returns `(selected, elimination_order)` as column indices.
#[pyfunction]
#[pyo3(signature = (x, y, k, seed = 0, n_trees = 100, protected = Vec::new()))]
fn rfe_select(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    k: usize,
    seed: u64,
    n_trees: usize,
    protected: Vec<usize>,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let params = ForestParams {
        n_trees,
        ..Default::default()
    };
    let r = rfe::rfe_select_protected(&to_matrix(x)?, &y, k, &protected, &params, &mut RandomSource::new(seed))
        .map_err(py_err)?;
    Ok((r.selected, r.elimination_order))
}

/// Largest relative error between analytic and finite-difference
/// gradients over `models` small random networks.
#[pyfunction]
#[pyo3(signature = (models = 20, seed = 0, eps = 1e-4))]
fn gradcheck(py: Python<'_>, models: u64, seed: u64, eps: f64) -> PyResult<f64> {
    py.detach(|| {
        let mut worst = 0.0f64;
        for i in 0..models {
            let s = seed.wrapping_add(i);
            let (p, batch) = random_instance(s, 5, 4);
            worst = worst.max(grad_check(&p, &batch, eps, &mut RandomSource::new(s))?.max_rel_error);
        }
        Ok(worst)
    })
    .map_err(py_err)
}

#[pymodule]
fn updrs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyReport>()?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.label()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_baselines, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lls, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cg, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(rfe_select, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
