//! Python bindings: constellation geometry, link budgets, popularity,
//! a steppable caching environment, the PCF baseline and full runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use leocache::agents::pcf_policy as pcf;
use leocache::channel::{self, LinkBudget};
use leocache::constellation::{self, ConstellationConfig};
use leocache::env::{CacheEnv, CacheMatrix, EnvConfig, SlotMetrics};
use leocache::runner::{self, RunOptions, Scheme};
use leocache::workload::{self, RequestSet};
use leocache::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Divergence(_) | Error::Invariant(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// ECEF positions in km of a Walker constellation at time `t` seconds.
#[pyfunction]
#[pyo3(signature = (planes, sats_per_plane, altitude_km, inclination_deg, t=0.0))]
fn satellite_positions(
    planes: usize,
    sats_per_plane: usize,
    altitude_km: f64,
    inclination_deg: f64,
    t: f64,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = ConstellationConfig::walker(planes, sats_per_plane, altitude_km, inclination_deg);
    cfg.validate().map_err(to_py)?;
    let states = constellation::propagate(&cfg, t).map_err(to_py)?;
    Ok(states
        .iter()
        .map(|s| (s.position[0], s.position[1], s.position[2]))
        .collect())
}

/// Sorted grid neighbors of satellite `sat`.
#[pyfunction]
fn isl_neighbors(planes: usize, sats_per_plane: usize, sat: usize) -> PyResult<Vec<usize>> {
    let cfg = ConstellationConfig::walker(planes, sats_per_plane, 1000.0, 60.0);
    cfg.validate().map_err(to_py)?;
    if sat >= cfg.num_satellites() {
        return Err(PyValueError::new_err(format!("satellite {sat} out of range")));
    }
    Ok(constellation::isl_neighbors(&cfg, sat).into_iter().collect())
}

/// ISL rate in bit/s over `distance_m` with the default link budget.
#[pyfunction]
fn isl_rate(distance_m: f64) -> PyResult<f64> {
    channel::isl_rate(&LinkBudget::default(), distance_m).map_err(to_py)
}

/// Per-request downlink rate in bit/s with the default link budget.
#[pyfunction]
#[pyo3(signature = (distance_m, rain_db=0.0, concurrent=1))]
fn downlink_rate(distance_m: f64, rain_db: f64, concurrent: usize) -> PyResult<f64> {
    let b = LinkBudget::default();
    let g = channel::downlink_gain(&b, distance_m, rain_db).map_err(to_py)?;
    Ok(channel::downlink_rate_shared(&b, g, concurrent))
}

#[pyfunction]
fn zipf_popularity(count: usize, alpha: f64) -> PyResult<Vec<f64>> {
    workload::zipf_popularity(count, alpha).map_err(to_py)
}

/// Top-`capacity` contents per satellite from request counts.
#[pyfunction]
fn pcf_policy(requests: Vec<Vec<u32>>, capacity: usize) -> PyResult<Vec<Vec<u32>>> {
    let r = RequestSet::from_rows(&requests).map_err(to_py)?;
    let rows = pcf(&r, capacity).map_err(to_py)?.to_rows();
    // Lists of ints; a Vec<u8> would surface as bytes.
    Ok(rows.into_iter().map(|r| r.into_iter().map(u32::from).collect()).collect())
}

fn metrics_dict<'py>(py: Python<'py>, m: &SlotMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("success_rate", m.success_rate)?;
    d.set_item("discarded", m.discarded)?;
    d.set_item("total_requests", m.total_requests)?;
    d.set_item("traffic_req", m.traffic_req)?;
    d.set_item("traffic_update", m.traffic_update)?;
    d.set_item("traffic_total", m.traffic_total)?;
    d.set_item("reward", m.reward)?;
    Ok(d)
}

/// Caching environment. Built from a TOML experiment file, or the 4x4 desk
/// scenario when no path is given.
#[pyclass(name = "CacheEnv")]
struct PyCacheEnv {
    inner: CacheEnv,
}

#[pymethods]
impl PyCacheEnv {
    #[new]
    #[pyo3(signature = (config=None, seed=0, capacity=None))]
    fn new(config: Option<PathBuf>, seed: u64, capacity: Option<usize>) -> PyResult<Self> {
        let mut cfg = match config {
            Some(path) => runner::load_config(&path).map_err(to_py)?.env_config().map_err(to_py)?,
            None => EnvConfig::desk(),
        };
        if let Some(c) = capacity {
            cfg.capacity = c;
        }
        Ok(Self {
            inner: CacheEnv::seeded(cfg, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_sats(&self) -> usize {
        self.inner.config().num_sats()
    }

    #[getter]
    fn num_contents(&self) -> usize {
        self.inner.config().catalog.len()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.config().capacity
    }

    #[getter]
    fn slot(&self) -> usize {
        self.inner.state().slot
    }

    /// Starts an episode at `start_s` seconds with empty caches.
    #[pyo3(signature = (start_s=0.0))]
    fn reset(&mut self, start_s: f64) -> PyResult<()> {
        self.inner.reset(start_s).map_err(to_py)?;
        Ok(())
    }

    /// Request counts of the current slot, one row per satellite.
    fn requests(&self) -> Vec<Vec<u32>> {
        let r = &self.inner.state().requests;
        (0..r.num_sats()).map(|n| r.row(n).to_vec()).collect()
    }

    /// Node feature matrix of the current graph.
    fn node_features(&self) -> Vec<Vec<f64>> {
        let x = &self.inner.state().graph.node_features;
        (0..x.rows()).map(|r| x.row(r).to_vec()).collect()
    }

    /// Applies a 0/1 cache matrix and returns the slot metrics.
    fn step<'py>(&mut self, py: Python<'py>, cache: Vec<Vec<u32>>) -> PyResult<Bound<'py, PyDict>> {
        let cap = self.inner.config().capacity;
        let rows: Vec<Vec<u8>> = cache
            .iter()
            .map(|r| r.iter().map(|&v| u8::try_from(v).unwrap_or(u8::MAX)).collect())
            .collect();
        let m = CacheMatrix::from_rows(&rows, cap).map_err(to_py)?;
        let step = self.inner.step(&m).map_err(to_py)?;
        let d = metrics_dict(py, &step.outcome.metrics)?;
        d.set_item("done", step.done)?;
        Ok(d)
    }
}

/// Runs an experiment file and returns the evaluation averages.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None, episodes=None, scheme=None))]
fn run<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    episodes: Option<usize>,
    scheme: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = runner::load_config(&config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    if let Some(e) = episodes {
        cfg.experiment.episodes = e;
    }
    if let Some(s) = scheme {
        cfg.experiment.scheme = s.parse::<Scheme>().map_err(to_py)?;
    }
    let summary = runner::run(&cfg, &out, &RunOptions::default()).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("scheme", summary.scheme.as_str())?;
    d.set_item("capacity", summary.capacity)?;
    d.set_item("per_sat", summary.per_sat)?;
    d.set_item("eval_slots", summary.eval.slots)?;
    d.set_item("success_rate", summary.eval.success_rate)?;
    d.set_item("traffic_update", summary.eval.traffic_update)?;
    d.set_item("traffic_total", summary.eval.traffic_total)?;
    d.set_item("reward", summary.eval.reward)?;
    Ok(d)
}

#[pymodule]
fn pyleocache(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(satellite_positions, m)?)?;
    m.add_function(wrap_pyfunction!(isl_neighbors, m)?)?;
    m.add_function(wrap_pyfunction!(isl_rate, m)?)?;
    m.add_function(wrap_pyfunction!(downlink_rate, m)?)?;
    m.add_function(wrap_pyfunction!(zipf_popularity, m)?)?;
    m.add_function(wrap_pyfunction!(pcf_policy, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyCacheEnv>()?;
    Ok(())
}
