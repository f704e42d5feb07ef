//! Python bindings: synthetic data, training, detection and evaluation.
//!
//! Structured results (histories, fits, evaluation tables) come back as
//! plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use tsad::cli::{load_dataset_dir, DataArgs, RunConfig};
use tsad::data::{generate_synthetic, Dataset};
use tsad::model::ModelCheckpoint;
use tsad::scoring::AnomalyReport;
use tsad::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract { .. } => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, x) in o {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

// `Vec<u8>` would surface as `bytes`.
fn bits(v: &[u8]) -> Vec<u32> {
    v.iter().map(|&b| u32::from(b)).collect()
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| py_err(e.into()))?;
    to_py(py, &v)
}

/// Keyword arguments become config entries; values go through `str()`, and
/// Python booleans map to `true`/`false`.
fn config_from(prefix: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let key = if prefix.is_empty() { key.replace("__", ".") } else { format!("{prefix}{key}") };
            let val = match v.extract::<bool>() {
                Ok(b) if v.is_instance_of::<pyo3::types::PyBool>() => b.to_string(),
                _ => v.str()?.to_string(),
            };
            cfg.values.insert(key, val);
        }
    }
    Ok(cfg)
}

#[pyclass(name = "Dataset", module = "tsad_py", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Load `train.csv`, `test.csv` and optional label files from a directory.
    #[staticmethod]
    #[pyo3(signature = (dir, header = false))]
    fn load(dir: PathBuf, header: bool) -> PyResult<Self> {
        let inner = load_dataset_dir(&DataArgs { data: dir, header }).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_sensors(&self) -> usize {
        self.inner.n_sensors()
    }

    #[getter]
    fn sensor_names(&self) -> Vec<String> {
        self.inner.train.sensor_names().to_vec()
    }

    #[getter]
    fn train_len(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn test_len(&self) -> usize {
        self.inner.test.len()
    }

    #[getter]
    fn test_labels(&self) -> Option<Vec<u32>> {
        self.inner.test.anomaly_labels().map(bits)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_sensors={}, train_len={}, test_len={})",
            self.inner.n_sensors(),
            self.inner.train.len(),
            self.inner.test.len()
        )
    }
}

#[pyclass(name = "SyntheticData", module = "tsad_py")]
pub struct PySynthetic {
    inner: tsad::data::SyntheticOutput,
}

#[pymethods]
impl PySynthetic {
    #[getter]
    fn dataset(&self) -> PyDataset {
        PyDataset {
            inner: self.inner.dataset.clone(),
        }
    }

    /// Planted edges as `(cause, effect, lag, coef)` tuples.
    #[getter]
    fn planted_edges(&self) -> Vec<(usize, usize, usize, f64)> {
        self.inner.planted_edges.iter().map(|e| (e.cause, e.effect, e.lag, e.coef)).collect()
    }

    #[getter]
    fn segments<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner.segments)
    }

    fn write_dir(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
        self.inner.write_dir(&dir).map_err(py_err)
    }
}

#[pyclass(name = "Checkpoint", module = "tsad_py")]
pub struct PyCheckpoint {
    inner: ModelCheckpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ModelCheckpoint::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn hyperparams<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner.hyperparams)
    }

    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner.history)
    }

    #[getter]
    fn best_epoch(&self) -> Option<usize> {
        self.inner.best_epoch
    }
}

#[pyclass(name = "Report", module = "tsad_py")]
pub struct PyReport {
    inner: AnomalyReport,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn read_jsonl(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: AnomalyReport::read_jsonl(&path).map_err(py_err)?,
        })
    }

    fn write_jsonl(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_jsonl(&path).map_err(py_err)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn fallback(&self) -> bool {
        self.inner.fallback
    }

    #[getter]
    fn timestamps(&self) -> Vec<usize> {
        self.inner.timestamps.clone()
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.inner.scores.clone()
    }

    #[getter]
    fn verdicts(&self) -> Vec<u32> {
        bits(&self.inner.verdicts)
    }

    /// Top-`k` `(sensor, score)` pairs at report row `index`; empty unless
    /// that row is flagged.
    #[pyo3(signature = (index, k = 5))]
    fn root_causes(&self, index: usize, k: usize) -> PyResult<Vec<(usize, f64)>> {
        if index >= self.inner.scores.len() {
            return Err(PyValueError::new_err(format!(
                "index {index} out of range for {} rows",
                self.inner.scores.len()
            )));
        }
        Ok(self.inner.root_causes(index, k))
    }

    fn __len__(&self) -> usize {
        self.inner.scores.len()
    }
}

/// Defaults merged with keyword overrides, e.g. `hyperparams(width=32)`.
/// Ablation flags use a double underscore: `ablation__no_tdr=True`.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn hyperparams<'py>(py: Python<'py>, kwargs: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let hp = config_from("", kwargs)?.hyperparams().map_err(py_err)?;
    serialize(py, &hp)
}

#[pyfunction(name = "generate_synthetic")]
#[pyo3(signature = (**kwargs))]
fn py_generate_synthetic(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PySynthetic> {
    let cfg = config_from("synthetic.", kwargs)?.synthetic().map_err(py_err)?;
    Ok(PySynthetic {
        inner: generate_synthetic(&cfg).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (dataset, **kwargs))]
fn train(py: Python<'_>, dataset: &PyDataset, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PyCheckpoint> {
    let hp = config_from("", kwargs)?.hyperparams().map_err(py_err)?;
    let ds = dataset.inner.clone();
    let inner = py.detach(move || tsad::model::train(&ds, &hp)).map_err(py_err)?;
    Ok(PyCheckpoint { inner })
}

#[pyfunction]
#[pyo3(signature = (checkpoint, dataset, beta = None))]
fn detect(checkpoint: &PyCheckpoint, dataset: &PyDataset, beta: Option<f64>) -> PyResult<PyReport> {
    let inner = tsad::pipeline::detect(&checkpoint.inner, &dataset.inner.test, beta).map_err(py_err)?;
    Ok(PyReport { inner })
}

#[pyfunction]
fn evaluate<'py>(py: Python<'py>, report: &PyReport, dataset: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
    let ev = tsad::pipeline::evaluate(&report.inner, &dataset.inner.test).map_err(py_err)?;
    serialize(py, &ev)
}

#[pyfunction]
#[pyo3(signature = (calibration, q = 0.01, init_quantile = 0.98))]
fn pot_threshold<'py>(py: Python<'py>, calibration: Vec<f64>, q: f64, init_quantile: f64) -> PyResult<Bound<'py, PyAny>> {
    let fit = tsad::scoring::pot_threshold(&calibration, q, init_quantile).map_err(py_err)?;
    serialize(py, &fit)
}

#[pyfunction]
fn point_adjust(pred: Vec<u8>, truth: Vec<u8>) -> PyResult<Vec<u32>> {
    tsad::metrics::point_adjust(&pred, &truth).map(|v| bits(&v)).map_err(py_err)
}

#[pymodule]
fn tsad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySynthetic>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(hyperparams, m)?)?;
    m.add_function(wrap_pyfunction!(py_generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pot_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(point_adjust, m)?)?;
    Ok(())
}
