//! Python bindings: joint-realizability checks, network composition,
//! ensemble runs and the analytic reference laws.
//!
//! Matrices cross the boundary as nested lists of Python complex numbers;
//! simulation configs as dicts with the same keys as the JSON config files.

// The #[pyfunction]/#[pymethods] expansion trips this lint on its own glue.
#![allow(clippy::useless_conversion)]

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qtraj::commute::MeasurementSpec;
use qtraj::hilbert::CMatrix;
use qtraj::{QtrajError, SimulationConfig, SlhModel};

fn to_py_err(err: QtrajError) -> PyErr {
    match err {
        QtrajError::IntegrationDiverged(_) | QtrajError::OracleMismatch { .. } => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn to_cmatrix(rows: Vec<Vec<Complex64>>) -> PyResult<CMatrix> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(PyValueError::new_err("empty matrix"));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(CMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn from_cmatrix(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn py_to_json(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    if obj.is_none() {
        return Ok(serde_json::Value::Null);
    }
    if let Ok(b) = obj.downcast::<PyBool>() {
        return Ok(serde_json::Value::Bool(b.is_true()));
    }
    if let Ok(n) = obj.extract::<u64>() {
        return Ok(serde_json::Value::from(n));
    }
    if let Ok(n) = obj.extract::<i64>() {
        return Ok(serde_json::Value::from(n));
    }
    if let Ok(x) = obj.extract::<f64>() {
        return serde_json::Number::from_f64(x)
            .map(serde_json::Value::Number)
            .ok_or_else(|| PyValueError::new_err("non-finite number in config"));
    }
    if let Ok(s) = obj.extract::<String>() {
        return Ok(serde_json::Value::String(s));
    }
    if let Ok(list) = obj.downcast::<PyList>() {
        let items = list
            .iter()
            .map(|v| py_to_json(&v))
            .collect::<PyResult<_>>()?;
        return Ok(serde_json::Value::Array(items));
    }
    if let Ok(dict) = obj.downcast::<PyDict>() {
        let mut map = serde_json::Map::new();
        for (k, v) in dict.iter() {
            map.insert(k.extract::<String>()?, py_to_json(&v)?);
        }
        return Ok(serde_json::Value::Object(map));
    }
    Err(PyValueError::new_err(format!(
        "unsupported config value of type {}",
        obj.get_type().name()?
    )))
}

fn config_from_dict(config: &Bound<'_, PyDict>) -> PyResult<SimulationConfig> {
    let value = py_to_json(config.as_any())?;
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(format!("config: {e}")))
}

/// A scattering/coupling/Hamiltonian component.
#[pyclass(frozen, name = "Slh")]
struct PySlh {
    inner: SlhModel,
}

#[pymethods]
impl PySlh {
    #[new]
    fn new(
        s: Vec<Vec<Complex64>>,
        l: Vec<Vec<Vec<Complex64>>>,
        h: Vec<Vec<Complex64>>,
    ) -> PyResult<Self> {
        let s = to_cmatrix(s)?;
        let l = l
            .into_iter()
            .map(to_cmatrix)
            .collect::<PyResult<Vec<_>>>()?;
        let h = to_cmatrix(h)?;
        Ok(Self {
            inner: SlhModel::new(s, l, h).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn beam_splitter(r: f64, theta: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: qtraj::network::beam_splitter(r, theta, dim).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn passive(channels: usize, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SlhModel::passive(channels, dim).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn s(&self) -> Vec<Vec<Complex64>> {
        from_cmatrix(self.inner.s())
    }

    #[getter]
    fn l(&self) -> Vec<Vec<Vec<Complex64>>> {
        self.inner.l().iter().map(from_cmatrix).collect()
    }

    #[getter]
    fn h(&self) -> Vec<Vec<Complex64>> {
        from_cmatrix(self.inner.h())
    }

    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "Slh(channels={}, dim={})",
            self.inner.channels(),
            self.inner.dim()
        )
    }
}

/// Parallel composition of two components on the same space.
#[pyfunction]
fn concatenate(g1: &PySlh, g2: &PySlh) -> PyResult<PySlh> {
    Ok(PySlh {
        inner: qtraj::network::concatenate(&g1.inner, &g2.inner).map_err(to_py_err)?,
    })
}

/// Series composition, g1 feeding into g2.
#[pyfunction]
fn series(g1: &PySlh, g2: &PySlh) -> PyResult<PySlh> {
    Ok(PySlh {
        inner: qtraj::network::series(&g1.inner, &g2.inner).map_err(to_py_err)?,
    })
}

/// Closed form of a single-channel component concatenated with a vacuum
/// port and fed through a beam splitter.
#[pyfunction]
fn beam_splitter_composite(
    l: Vec<Vec<Complex64>>,
    h: Vec<Vec<Complex64>>,
    r: f64,
    theta: f64,
) -> PyResult<PySlh> {
    let l = to_cmatrix(l)?;
    let h = to_cmatrix(h)?;
    Ok(PySlh {
        inner: qtraj::network::beam_splitter_composite(&l, &h, r, theta).map_err(to_py_err)?,
    })
}

/// Closed-form joint-realizability verdict for quadrature selection F and
/// counting selection G. Returns the same report the CLI prints.
#[pyfunction]
#[pyo3(signature = (f, g, tol=None))]
fn check_self_commutative(
    py: Python<'_>,
    f: Vec<Vec<Complex64>>,
    g: Vec<Vec<Complex64>>,
    tol: Option<f64>,
) -> PyResult<PyObject> {
    let spec = MeasurementSpec::new(to_cmatrix(f)?, to_cmatrix(g)?).map_err(to_py_err)?;
    let report = qtraj::check_self_commutative(&spec, tol);
    let out = PyDict::new_bound(py);
    out.set_item("commutative", report.commutative)?;
    let conditions = PyDict::new_bound(py);
    conditions.set_item("F", report.condition_f)?;
    conditions.set_item("G_Fstar", report.condition_g_fstar)?;
    conditions.set_item("G_F", report.condition_g_f)?;
    out.set_item("conditions", conditions)?;
    let violations = PyDict::new_bound(py);
    violations.set_item("F", report.violations.condition_f)?;
    violations.set_item("G_Fstar", report.violations.condition_g_fstar)?;
    violations.set_item("G_F", report.violations.condition_g_f)?;
    out.set_item("violations", violations)?;
    out.set_item("tol", report.tol)?;
    Ok(out.into())
}

/// Cross-check the closed-form verdict against the product-table oracle on
/// `trials` random system instantiations; raises on disagreement.
#[pyfunction]
#[pyo3(signature = (f, g, trials=8, seed=0xC0FFEE))]
fn cross_validate(
    f: Vec<Vec<Complex64>>,
    g: Vec<Vec<Complex64>>,
    trials: usize,
    seed: u64,
) -> PyResult<bool> {
    let spec = MeasurementSpec::new(to_cmatrix(f)?, to_cmatrix(g)?).map_err(to_py_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    qtraj::cross_validate(&spec, trials, &mut rng).map_err(to_py_err)
}

/// Mean excitation of the unconditional law, n0 exp(-gamma t).
#[pyfunction]
fn analytic_mean_number(n0: usize, gamma: f64, t: f64) -> f64 {
    qtraj::analytic_mean_number(n0, gamma, t)
}

/// Unconditional number distribution over levels 0..=n0 at time t.
#[pyfunction]
fn analytic_number_distribution(n0: usize, gamma: f64, t: f64) -> Vec<f64> {
    qtraj::analytic_number_distribution(n0, gamma, t)
}

/// Total variation distance between two distributions.
#[pyfunction]
fn total_variation(p: Vec<f64>, q: Vec<f64>) -> f64 {
    qtraj::ensemble::total_variation(&p, &q)
}

/// Run a trajectory ensemble; `config` uses the JSON config keys.
#[pyfunction]
#[pyo3(signature = (config, threads=None))]
fn run_ensemble(
    py: Python<'_>,
    config: &Bound<'_, PyDict>,
    threads: Option<usize>,
) -> PyResult<PyObject> {
    let config = config_from_dict(config)?;
    let summary = py
        .allow_threads(|| qtraj::run_ensemble(&config, threads))
        .map_err(to_py_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("times", summary.times)?;
    out.set_item("mean_N", summary.mean_n)?;
    out.set_item("stderr_N", summary.stderr_n)?;
    out.set_item("analytic_N", summary.analytic_n)?;
    out.set_item("snapshot_times", summary.snapshot_times)?;
    let snapshots: Vec<Vec<Vec<Complex64>>> = summary
        .snapshot_densities
        .iter()
        .map(from_cmatrix)
        .collect();
    out.set_item("snapshot_densities", snapshots)?;
    out.set_item("jump_counts", summary.jump_counts)?;
    out.set_item("leakage_max", summary.leakage_max)?;
    out.set_item("rate_warning_steps", summary.rate_warning_steps)?;
    out.set_item("max_norm_defect", summary.max_norm_defect)?;
    Ok(out.into())
}

/// Run the corrected and scaling-free filters on shared noise streams.
#[pyfunction]
#[pyo3(signature = (config, threads=None))]
fn compare_filters(
    py: Python<'_>,
    config: &Bound<'_, PyDict>,
    threads: Option<usize>,
) -> PyResult<PyObject> {
    let config = config_from_dict(config)?;
    let report = py
        .allow_threads(|| qtraj::compare_filters(&config, threads))
        .map_err(to_py_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("times", report.times)?;
    out.set_item("mean_corrected", report.mean_corrected)?;
    out.set_item("stderr_corrected", report.stderr_corrected)?;
    out.set_item("mean_kuramochi", report.mean_kuramochi)?;
    out.set_item("stderr_kuramochi", report.stderr_kuramochi)?;
    out.set_item("analytic_N", report.analytic_n)?;
    out.set_item("z_corrected", report.z_corrected)?;
    out.set_item("z_kuramochi", report.z_kuramochi)?;
    out.set_item("jumps_corrected", report.jumps_corrected)?;
    out.set_item("jumps_kuramochi", report.jumps_kuramochi)?;
    out.set_item("leakage_max", report.leakage_max)?;
    out.set_item("rate_warning_steps", report.rate_warning_steps)?;
    Ok(out.into())
}

#[pymodule]
fn qtraj_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySlh>()?;
    m.add_function(wrap_pyfunction!(concatenate, m)?)?;
    m.add_function(wrap_pyfunction!(series, m)?)?;
    m.add_function(wrap_pyfunction!(beam_splitter_composite, m)?)?;
    m.add_function(wrap_pyfunction!(check_self_commutative, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_mean_number, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_number_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(total_variation, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(compare_filters, m)?)?;
    Ok(())
}
