//! Python bindings. Reports cross the boundary as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use peerenc_core::config::RunConfig;
use peerenc_core::design::{run_design_replicate, DesignConfig, ExperimentData};
use peerenc_core::estimands::{estimand_report, ExactEngine, Theorem};
use peerenc_core::estimators::estimate;
use peerenc_core::mechanisms::{AssignmentVector, Mechanism};
use peerenc_core::montecarlo::{replicate, verify_theorems, with_threads};
use peerenc_core::population::{inspect, validate, Population};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

/// Independent-Bernoulli encouragement mechanism.
#[pyclass(name = "Mechanism", frozen)]
struct PyMechanism {
    inner: Mechanism,
}

#[pymethods]
impl PyMechanism {
    /// `Mechanism(name, p)` for a scalar probability or
    /// `Mechanism(name, probs=[...])` for one probability per individual.
    #[new]
    #[pyo3(signature = (name, p=None, probs=None))]
    fn new(name: &str, p: Option<f64>, probs: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match (p, probs) {
            (Some(p), None) => Mechanism::scalar(name, p),
            (None, Some(v)) => Mechanism::per_unit(name, v),
            _ => return Err(PyValueError::new_err("give exactly one of p or probs")),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    /// Probability of a 0/1 assignment vector.
    fn prob(&self, z: Vec<u8>) -> PyResult<f64> {
        let bits = z
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(PyValueError::new_err("assignment entries must be 0 or 1")),
            })
            .collect::<PyResult<Vec<_>>>()?;
        self.inner.prob(&AssignmentVector::new(bits)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Mechanism({:?})", self.inner.name())
    }
}

/// Finite population of blocks with potential treatments and outcomes.
#[pyclass(name = "Population", frozen)]
struct PyPopulation {
    inner: Population,
}

#[pymethods]
impl PyPopulation {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = Population::from_json(text).map_err(err)?;
        validate(&inner).map_err(err)?;
        Ok(Self { inner })
    }

    /// Builds the population described by a run configuration (JSON text).
    #[staticmethod]
    fn generate(config_json: &str) -> PyResult<Self> {
        let cfg = RunConfig::from_json(config_json).map_err(err)?;
        Ok(Self {
            inner: cfg.build_population().map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.inner.num_blocks()
    }

    #[getter]
    fn block_sizes(&self) -> Vec<usize> {
        self.inner.block_sizes()
    }

    /// Stratum counts, flags and per-block encouragement effects.
    fn validation(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &inspect(&self.inner))
    }

    fn summary(&self) -> String {
        inspect(&self.inner).summary()
    }

    /// Every exact estimand for the mechanism pair.
    fn estimands(&self, py: Python<'_>, mech_a: PyRef<'_, PyMechanism>, mech_b: PyRef<'_, PyMechanism>) -> PyResult<Py<PyAny>> {
        let report = estimand_report(&ExactEngine::default(), &self.inner, &mech_a.inner, &mech_b.inner).map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Population(blocks={}, units={})", self.inner.num_blocks(), self.inner.num_units())
    }
}

fn design(mech_a: &PyMechanism, mech_b: &PyMechanism, k: usize, seed: u64) -> DesignConfig {
    DesignConfig::new(mech_a.inner.clone(), mech_b.inner.clone(), k, seed)
}

/// One replication of the design; returns the realized data as CSV text.
#[pyfunction]
#[pyo3(signature = (pop, mech_a, mech_b, k, seed, replicate=0))]
fn run_design(
    pop: PyRef<'_, PyPopulation>,
    mech_a: PyRef<'_, PyMechanism>,
    mech_b: PyRef<'_, PyMechanism>,
    k: usize,
    seed: u64,
    replicate: u64,
) -> PyResult<String> {
    let cfg = design(&mech_a, &mech_b, k, seed);
    run_design_replicate(&pop.inner, &cfg, replicate)
        .and_then(|d| d.to_csv())
        .map_err(err)
}

/// Estimators computed from realized data in CSV form.
#[pyfunction]
fn estimates(py: Python<'_>, data_csv: &str, mech_a: PyRef<'_, PyMechanism>, mech_b: PyRef<'_, PyMechanism>) -> PyResult<Py<PyAny>> {
    let data = ExperimentData::from_csv(data_csv).map_err(err)?;
    to_py(py, &estimate(&data, &mech_a.inner, &mech_b.inner).map_err(err)?)
}

/// Monte Carlo summary of the estimators against their exact targets.
#[pyfunction(name = "replicate")]
#[pyo3(signature = (pop, mech_a, mech_b, k, seed, replications, threads=None))]
#[allow(clippy::too_many_arguments)]
fn py_replicate(
    py: Python<'_>,
    pop: PyRef<'_, PyPopulation>,
    mech_a: PyRef<'_, PyMechanism>,
    mech_b: PyRef<'_, PyMechanism>,
    k: usize,
    seed: u64,
    replications: usize,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = design(&mech_a, &mech_b, k, seed);
    let pop = &pop.inner;
    let summary = py
        .detach(|| with_threads(threads, || replicate(&ExactEngine::default(), pop, &cfg, replications)))
        .map_err(err)?
        .map_err(err)?;
    to_py(py, &summary)
}

/// Theorem verification report; the returned dict carries a `passes` entry
/// evaluated with `expect_fail` (a list of "thm1", "thm2", "thm3").
#[pyfunction]
#[pyo3(signature = (pop, mech_a, mech_b, k, seed, replications, expect_fail=Vec::new()))]
#[allow(clippy::too_many_arguments)]
fn verify(
    py: Python<'_>,
    pop: PyRef<'_, PyPopulation>,
    mech_a: PyRef<'_, PyMechanism>,
    mech_b: PyRef<'_, PyMechanism>,
    k: usize,
    seed: u64,
    replications: usize,
    expect_fail: Vec<String>,
) -> PyResult<Py<PyAny>> {
    let expect = expect_fail
        .iter()
        .map(|s| match s.as_str() {
            "thm1" => Ok(Theorem::Thm1),
            "thm2" => Ok(Theorem::Thm2),
            "thm3" => Ok(Theorem::Thm3),
            other => Err(PyValueError::new_err(format!("unknown theorem '{other}'"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = design(&mech_a, &mech_b, k, seed);
    let pop = &pop.inner;
    let report = py
        .detach(|| verify_theorems(&ExactEngine::default(), pop, &cfg, replications))
        .map_err(err)?;
    let out = to_py(py, &report)?;
    out.bind(py).set_item("passes", report.passes(&expect))?;
    Ok(out)
}

#[pymodule]
fn peerenc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMechanism>()?;
    m.add_class::<PyPopulation>()?;
    m.add_function(wrap_pyfunction!(run_design, m)?)?;
    m.add_function(wrap_pyfunction!(estimates, m)?)?;
    m.add_function(wrap_pyfunction!(py_replicate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
