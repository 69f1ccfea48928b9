//! Python bindings: run configurations, data splits, training, evaluation,
//! latent export, kernels and the GP guidance cost.
//!
//! Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use npga::cli::{checkpoint_to_string, evaluate_model, load_splits, run_gradcheck, RunConfig, Splits};
use npga::data::Dataset;
use npga::eval::{export_latent, hidden_features};
use npga::guidance::gp_cost_from_gram;
use npga::kernels::{gram_symmetric, KernelKind, KernelSpec};
use npga::{NpgaError, TrainedModel};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: NpgaError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A run configuration in the `key = value` format.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Parses configuration text; an empty string gives the defaults.
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        let inner = RunConfig::parse(text).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(PyConfig { inner })
    }

    /// Every key with its value, in the same format.
    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.model.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.model.seed = seed;
    }
}

#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.features)
    }

    fn label_names(&self) -> Vec<String> {
        self.inner.label_sets.iter().map(|l| l.name.clone()).collect()
    }

    /// Label values (one-hot rows for discrete sets).
    fn labels(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.label_set(name).map_err(err)?.values))
    }

    fn class_indices(&self, name: &str) -> PyResult<Vec<usize>> {
        self.inner.class_indices(name).map_err(err)
    }
}

/// Training data plus the optional validation and test splits.
#[pyclass(name = "Splits")]
struct PySplits {
    inner: Splits,
}

#[pymethods]
impl PySplits {
    #[getter]
    fn train(&self) -> PyDataset {
        PyDataset {
            inner: self.inner.train.clone(),
        }
    }

    #[getter]
    fn validation(&self) -> Option<PyDataset> {
        self.inner.validation.clone().map(|inner| PyDataset { inner })
    }

    #[getter]
    fn test(&self) -> Option<PyDataset> {
        self.inner.test.clone().map(|inner| PyDataset { inner })
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
    trace: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Deterministic hidden codes, optionally restricted to units `start..end`.
    #[pyo3(signature = (dataset, start = None, end = None))]
    fn encode(&self, dataset: &PyDataset, start: Option<usize>, end: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
        let units = match (start, end) {
            (None, None) => None,
            (s, e) => Some(s.unwrap_or(0)..e.unwrap_or(self.inner.config.hidden_units)),
        };
        Ok(to_rows(
            &hidden_features(&self.inner, &dataset.inner, units).map_err(err)?,
        ))
    }

    /// Latent coordinates of GP term `spec` followed by label columns.
    fn latent(&self, dataset: &PyDataset, spec: usize) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
        let t = export_latent(&dataset.inner, &self.inner, spec).map_err(err)?;
        Ok((t.columns, to_rows(&t.rows)))
    }

    /// Cost after every CG iteration of training.
    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.len()
    }

    fn checkpoint(&self) -> PyResult<String> {
        checkpoint_to_string(&self.inner.layout, &self.inner.params).map_err(err)
    }
}

/// Generates or loads the configured data, subsampled and standardized.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn load(config: &PyConfig, seed: Option<u64>) -> PyResult<PySplits> {
    let inner = load_splits(&config.inner, seed.unwrap_or(config.inner.model.seed)).map_err(err)?;
    Ok(PySplits { inner })
}

/// Trains the configured model on `data`.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig, data: &PyDataset) -> PyResult<PyModel> {
    let (model, ds) = (config.inner.model.clone(), data.inner.clone());
    let out = py.detach(move || npga::train(&ds, &model, None)).map_err(err)?;
    Ok(PyModel {
        trace: out.trace.iter().map(|t| t.cost).collect(),
        inner: out.model,
    })
}

/// Probe accuracies as `(name, value)` pairs.
#[pyfunction]
fn evaluate(config: &PyConfig, model: &PyModel, splits: &PySplits) -> PyResult<Vec<(String, f64)>> {
    Ok(evaluate_model(&model.inner, &splits.inner, &config.inner)
        .map_err(err)?
        .0)
}

fn kernel_spec(kind: &str, signal_variance: f64, lengthscale: f64, period: f64) -> PyResult<KernelSpec> {
    let kind: KernelKind = kind.parse().map_err(err)?;
    Ok(KernelSpec {
        signal_variance,
        lengthscale,
        period,
        ..KernelSpec::new(kind)
    })
}

/// Gram matrix of `points` (rows) under a kernel.
#[pyfunction]
#[pyo3(signature = (points, kind = "rbf", signal_variance = 1.0, lengthscale = 1.0, period = 1.0))]
fn kernel_matrix(
    points: Vec<Vec<f64>>,
    kind: &str,
    signal_variance: f64,
    lengthscale: f64,
    period: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let spec = kernel_spec(kind, signal_variance, lengthscale, period)?;
    let k = gram_symmetric(&to_matrix(&points, "points")?, &spec).map_err(err)?;
    Ok(to_rows(&k))
}

/// `ln|K + σ²I| + (1/M) Σ_m z_mᵀ(K + σ²I)⁻¹z_m` for latent points and targets.
#[pyfunction]
#[pyo3(signature = (points, targets, noise_variance, kind = "rbf", signal_variance = 1.0, lengthscale = 1.0, period = 1.0))]
fn gp_cost(
    points: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    noise_variance: f64,
    kind: &str,
    signal_variance: f64,
    lengthscale: f64,
    period: f64,
) -> PyResult<f64> {
    let spec = kernel_spec(kind, signal_variance, lengthscale, period)?;
    let k = gram_symmetric(&to_matrix(&points, "points")?, &spec).map_err(err)?;
    let (cost, _) = gp_cost_from_gram(&k, noise_variance, &to_matrix(&targets, "targets")?).map_err(err)?;
    Ok(cost)
}

/// Finite-difference gradient check; one report line per cost term.
#[pyfunction]
fn gradcheck(config: &PyConfig) -> PyResult<Vec<(String, bool)>> {
    let reports = run_gradcheck(&config.inner.gradcheck, config.inner.model.seed).map_err(err)?;
    Ok(reports.iter().map(|r| (r.line(), r.passed)).collect())
}

#[pymodule]
#[pyo3(name = "npga")]
fn npga_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySplits>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(gp_cost, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
