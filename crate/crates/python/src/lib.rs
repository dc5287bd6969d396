//! Python bindings for the sparse-vq forecaster.
//!
//! Tensors cross the boundary as nested lists of floats; structured results
//! (metrics, histories, reports) come back as dictionaries.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use sparse_vq::data::{make_windows, RawSeries, SplitSpec};
use sparse_vq::experiments::{audit_horizons, AuditSpec, CoveringConfig};
use sparse_vq::model::{self, ModelConfig as CoreConfig};
use sparse_vq::svq::{self, CodebookStats, Metric, SparseRegressionConfig};
use sparse_vq::tensor::Tensor;
use sparse_vq::train::{self, TrainConfig};
use sparse_vq::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Json(_)
        | Error::Shape(_)
        | Error::Usage(_)
        | Error::InsufficientData(_)
        | Error::Load { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, value: &impl Serialize) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py
        .import_bound("json")?
        .call_method1("loads", (text,))?
        .unbind())
}

fn kwargs_json(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<serde_json::Value> {
    let Some(kwargs) = kwargs else {
        return Ok(serde_json::json!({}));
    };
    let text: String = py
        .import_bound("json")?
        .call_method1("dumps", (kwargs,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn merge(base: &mut serde_json::Value, overrides: serde_json::Value) {
    if let (Some(b), serde_json::Value::Object(o)) = (base.as_object_mut(), overrides) {
        b.extend(o);
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn batch(x: Vec<Vec<Vec<f64>>>) -> PyResult<Tensor> {
    let b = x.len();
    let l = x.first().map_or(0, Vec::len);
    let m = x.first().and_then(|w| w.first()).map_or(0, Vec::len);
    if x.iter()
        .any(|w| w.len() != l || w.iter().any(|r| r.len() != m))
    {
        return Err(PyValueError::new_err(
            "input must be a rectangular [batch][L][M] list",
        ));
    }
    Tensor::new(vec![b, l, m], x.into_iter().flatten().flatten().collect()).map_err(py_err)
}

fn series(rows: Vec<Vec<f64>>, frequency: &str) -> PyResult<RawSeries> {
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err(
            "series rows must all have the same number of channels",
        ));
    }
    RawSeries::new("python", rows.into_iter().flatten().collect(), m, frequency).map_err(py_err)
}

/// Forecaster hyperparameters. Keyword arguments override the defaults.
#[pyclass(module = "sparse_vq")]
#[derive(Clone)]
struct ModelConfig {
    inner: CoreConfig,
}

#[pymethods]
impl ModelConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(CoreConfig::default()).expect("config serializes");
        merge(&mut value, kwargs_json(py, kwargs)?);
        let inner: CoreConfig =
            serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_canonical_json()
    }

    #[getter]
    fn n_patches(&self) -> usize {
        self.inner.n_patches()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn input_length(&self) -> usize {
        self.inner.input_length
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({})", self.inner.to_canonical_json())
    }
}

/// Patch transformer forecaster with an optional vector quantizer.
#[pyclass(module = "sparse_vq")]
struct Forecaster {
    inner: model::Forecaster,
}

#[pymethods]
impl Forecaster {
    #[new]
    fn new(config: &ModelConfig) -> PyResult<Self> {
        Ok(Self {
            inner: model::Forecaster::new(config.inner.clone()).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_checkpoint(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn config(&self) -> ModelConfig {
        ModelConfig {
            inner: self.inner.config().clone(),
        }
    }

    /// Forecasts `[batch][T][M]` from `[batch][L][M]`.
    fn predict(&mut self, x: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let y = self.inner.predict(&batch(x)?).map_err(py_err)?;
        let (t, m) = (y.shape()[1], y.shape()[2]);
        Ok(y.data()
            .chunks(t * m)
            .map(|w| w.chunks(m).map(<[f64]>::to_vec).collect())
            .collect())
    }

    fn count_parameters(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner.count_parameters())
    }

    /// Trains on a `[timesteps][channels]` series split 7:1:2 and returns
    /// the per-epoch history.
    #[pyo3(signature = (series_rows, epochs=10, lr=1e-3, batch_size=64, patience=5, seed=0, stride=1, lambda1=0.25))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        series_rows: Vec<Vec<f64>>,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        patience: usize,
        seed: u64,
        stride: usize,
        lambda1: f64,
    ) -> PyResult<PyObject> {
        let s = series(series_rows, "")?;
        let cfg = self.inner.config();
        let d = make_windows(
            &s,
            &SplitSpec::default(),
            cfg.input_length,
            cfg.horizon,
            stride,
        )
        .map_err(py_err)?;
        let tc = TrainConfig {
            epochs,
            lr,
            batch_size,
            patience,
            seed,
            loss: train::LossConfig { lambda1 },
            ..Default::default()
        };
        let report = train::fit(&mut self.inner, &d.train, &d.val, &tc).map_err(py_err)?;
        to_py(py, &report.history)
    }

    /// Test-split metrics on a `[timesteps][channels]` series split 7:1:2.
    #[pyo3(signature = (series_rows, stride=1, frequency=""))]
    fn evaluate(
        &self,
        py: Python<'_>,
        series_rows: Vec<Vec<f64>>,
        stride: usize,
        frequency: &str,
    ) -> PyResult<PyObject> {
        let s = series(series_rows, frequency)?;
        let cfg = self.inner.config();
        let d = make_windows(
            &s,
            &SplitSpec::default(),
            cfg.input_length,
            cfg.horizon,
            stride,
        )
        .map_err(py_err)?;
        let reference = train::naive2_reference(&d.test, &d.train).map_err(py_err)?;
        let m =
            train::evaluate(&self.inner, &d.test, &d.train, Some(&reference)).map_err(py_err)?;
        to_py(py, &m)
    }

    /// Perplexity of the first codebook's usage since the last reset.
    fn codebook_perplexity(&self) -> PyResult<f64> {
        Ok(self.inner.codebook_stats().map_err(py_err)?.perplexity)
    }

    fn codebook(&self, stage: usize) -> PyResult<Vec<Vec<f64>>> {
        let z = self
            .inner
            .codebook(stage)
            .ok_or_else(|| PyValueError::new_err(format!("no codebook stage {stage}")))?;
        Ok((0..z.rows()).map(|i| z.row(i).to_vec()).collect())
    }
}

/// Sparse least-squares reconstruction of `x` from its `k` nearest
/// codewords with at most `t` nonzeros. Returns
/// `(reconstruction, support, coefficients)`.
#[pyfunction]
#[pyo3(signature = (x, codebook, k=8, t=4))]
fn sparse_reconstruct(
    x: Vec<f64>,
    codebook: Vec<Vec<f64>>,
    k: usize,
    t: usize,
) -> PyResult<(Vec<f64>, Vec<usize>, Vec<f64>)> {
    let cb = matrix(codebook)?;
    let cfg = SparseRegressionConfig {
        k_neighbors: k,
        max_nonzeros: t,
        ..Default::default()
    };
    cfg.validate(cb.rows()).map_err(py_err)?;
    let code = svq::sparse_reconstruct(&x, &cb, &cfg).map_err(py_err)?;
    Ok((code.reconstruction, code.support, code.coefficients))
}

/// Index of and Euclidean distance to the nearest codeword.
#[pyfunction]
fn nearest_codeword(x: Vec<f64>, codebook: Vec<Vec<f64>>) -> PyResult<(usize, f64)> {
    svq::nearest_codeword(&x, &matrix(codebook)?, Metric::Euclidean).map_err(py_err)
}

/// `exp(entropy)` of codeword usage counts.
#[pyfunction]
fn perplexity(counts: Vec<u64>) -> PyResult<f64> {
    Ok(CodebookStats::from_counts(&counts)
        .map_err(py_err)?
        .perplexity)
}

/// k-means++ seeded Lloyd iterations; returns `(centroids, assignments, objective)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed=0))]
#[allow(clippy::type_complexity)]
fn kmeans(
    points: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> {
    let r = svq::kmeans(&matrix(points)?, k, seed).map_err(py_err)?;
    let c = &r.centroids;
    Ok((
        (0..c.rows()).map(|i| c.row(i).to_vec()).collect(),
        r.assignments,
        r.objective,
    ))
}

/// Nearest-neighbour versus sparse reconstruction error on random unit vectors.
#[pyfunction]
#[pyo3(signature = (n=16, codebook_size=64, t=4, trials=1000, seed=0, epsilon=0.5))]
fn covering_demo(
    py: Python<'_>,
    n: usize,
    codebook_size: usize,
    t: usize,
    trials: usize,
    seed: u64,
    epsilon: f64,
) -> PyResult<PyObject> {
    let cfg = CoveringConfig {
        n,
        epsilon,
        codebook_size,
        t,
        trials,
        seed,
    };
    to_py(
        py,
        &sparse_vq::experiments::covering_demo(&cfg).map_err(py_err)?,
    )
}

/// Parameter counts of the FFN twins of `config` at each horizon.
#[pyfunction]
#[pyo3(signature = (config, horizons=vec![96, 192, 336, 720]))]
fn param_audit(py: Python<'_>, config: &ModelConfig, horizons: Vec<usize>) -> PyResult<PyObject> {
    let spec = AuditSpec {
        model: config.inner.clone(),
        horizons,
    };
    to_py(py, &audit_horizons(&spec).map_err(py_err)?)
}

/// `sin(2πt/period)` plus Gaussian noise, as `[length][channels]` rows.
#[pyfunction]
#[pyo3(signature = (length, period=24.0, noise=0.0, channels=1, seed=0))]
fn synthetic_sine(
    length: usize,
    period: f64,
    noise: f64,
    channels: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let s =
        sparse_vq::data::synthetic_sine(length, period, noise, channels, seed).map_err(py_err)?;
    Ok(s.values.chunks(channels).map(<[f64]>::to_vec).collect())
}

/// Splits a series into patches of length `patch_length` every `stride` steps.
#[pyfunction]
fn patchify(x: Vec<f64>, patch_length: usize, stride: usize) -> PyResult<Vec<Vec<f64>>> {
    let p = model::patchify(&x, patch_length, stride).map_err(py_err)?;
    Ok((0..p.rows()).map(|i| p.row(i).to_vec()).collect())
}

#[pymodule]
#[pyo3(name = "sparse_vq")]
fn sparse_vq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelConfig>()?;
    m.add_class::<Forecaster>()?;
    m.add_function(wrap_pyfunction!(sparse_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_codeword, m)?)?;
    m.add_function(wrap_pyfunction!(perplexity, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(covering_demo, m)?)?;
    m.add_function(wrap_pyfunction!(param_audit, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_sine, m)?)?;
    m.add_function(wrap_pyfunction!(patchify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
