//! Python bindings. Structured results cross the boundary as plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use swarmscale::analysis::collapse_records;
use swarmscale::geometry::Vec2;
use swarmscale::params::{Scenario, ScenarioParams};
use swarmscale::planner::{self, PlannerParams};
use swarmscale::pursuit::{self, Pursuit, PursuitParams};
use swarmscale::scaling::{self, BreakpointOptions, PerformanceCurve};
use swarmscale::sweep::{self, SweepSpec};
use swarmscale::Error;

fn err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn scenario(name: &str) -> PyResult<Scenario> {
    name.parse().map_err(err)
}

fn overrides(params: Option<BTreeMap<String, f64>>) -> Vec<(String, f64)> {
    params.unwrap_or_default().into_iter().collect()
}

fn with_overrides<P: ScenarioParams + Default>(params: Option<BTreeMap<String, f64>>) -> PyResult<P> {
    let mut p = P::default();
    for (k, v) in overrides(params) {
        p.set(&k, v).map_err(err)?;
    }
    p.validate().map_err(err)?;
    Ok(p)
}

/// Runs one scenario instance; returns `(metric value, flags)`.
#[pyfunction]
#[pyo3(signature = (scenario_name, params=None, seed=0))]
fn run(py: Python<'_>, scenario_name: &str, params: Option<BTreeMap<String, f64>>, seed: u64) -> PyResult<(f64, Vec<String>)> {
    let s = scenario(scenario_name)?;
    let o = overrides(params);
    py.detach(|| sweep::run_scenario(s, &o, seed)).map_err(err)
}

/// Every parameter of a scenario after applying `params` to the defaults.
#[pyfunction]
#[pyo3(signature = (scenario_name, params=None))]
fn resolve_params(scenario_name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Vec<(String, f64)>> {
    sweep::resolve(scenario(scenario_name)?, &overrides(params)).map_err(err)
}

#[pyfunction]
fn expand_grid<'py>(py: Python<'py>, spec_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec = SweepSpec::from_toml(spec_toml).map_err(err)?;
    to_py(py, &sweep::expand_grid(&spec).map_err(err)?)
}

/// Executes a sweep given as TOML text and returns its records.
#[pyfunction]
#[pyo3(signature = (spec_toml, workers=1))]
fn run_sweep<'py>(py: Python<'py>, spec_toml: &str, workers: usize) -> PyResult<Bound<'py, PyAny>> {
    let spec = SweepSpec::from_toml(spec_toml).map_err(err)?;
    let records = py.detach(|| sweep::run_sweep(&spec, workers)).map_err(err)?;
    to_py(py, &records)
}

#[pyfunction]
fn read_records<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &sweep::read_records(&path).map_err(err)?)
}

/// Master curves and collapse scores of a record file.
#[pyfunction]
fn collapse<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let records = sweep::read_records(&path).map_err(err)?;
    to_py(py, &collapse_records(&records).map_err(err)?)
}

#[pyfunction]
fn tanh_threshold(x: f64, n_eff: f64) -> f64 {
    scaling::tanh_threshold(x, n_eff)
}

#[pyfunction]
fn fit_tanh<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &scaling::fit_tanh_points(&x, &y).map_err(err)?)
}

#[pyfunction]
fn fit_powerlaw<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &scaling::fit_powerlaw(&x, &y).map_err(err)?)
}

#[pyfunction]
fn fit_breakpoint<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let curve = PerformanceCurve::new(x, y).map_err(err)?;
    to_py(py, &scaling::fit_breakpoint_points(&curve.x, &curve.y, BreakpointOptions::default()).map_err(err)?)
}

#[pyfunction]
fn predict_ndeff(n_d: f64, r: f64, d: f64, v: f64, tau: f64, v_a: f64) -> f64 {
    scaling::predict_ndeff(n_d, r, d, v, tau, v_a)
}

#[pyfunction]
fn compute_neff_search(n: usize, speed: f64, sensing_range: f64, loss_rate: f64, area: f64, comms: bool) -> f64 {
    scaling::compute_neff_search(n, speed, sensing_range, loss_rate, area, comms)
}

/// Returns `(point, time)`; `time` is `None` when the target cannot be caught.
#[pyfunction]
fn intercept_point(target_pos: (f64, f64), target_vel: (f64, f64), pursuer_pos: (f64, f64), speed: f64) -> ((f64, f64), Option<f64>) {
    let v = |p: (f64, f64)| Vec2::new(p.0, p.1);
    let i = pursuit::intercept_point(v(target_pos), v(target_vel), v(pursuer_pos), speed);
    ((i.point.x, i.point.y), i.time)
}

/// Bootstraps a planner instance from a pursuit run and optimizes it.
#[pyfunction]
#[pyo3(signature = (params=None, seed=0))]
fn plan<'py>(py: Python<'py>, params: Option<BTreeMap<String, f64>>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let p: PlannerParams = with_overrides(params)?;
    let outcome = py.detach(|| planner::plan(&p, seed)).map_err(err)?;
    to_py(py, &outcome)
}

#[pyfunction]
fn path_length(points: Vec<(f64, f64)>, dt: f64) -> f64 {
    let traj: Vec<Vec2> = points.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
    planner::path_length(&traj, dt)
}

/// Step-by-step pursuit simulation.
#[pyclass(name = "Pursuit", unsendable)]
struct PyPursuit {
    inner: Option<Pursuit>,
    outcome: Option<pursuit::PursuitOutcome>,
}

#[pymethods]
impl PyPursuit {
    #[new]
    #[pyo3(signature = (params=None, seed=0))]
    fn new(params: Option<BTreeMap<String, f64>>, seed: u64) -> PyResult<Self> {
        let p: PursuitParams = with_overrides(params)?;
        Ok(PyPursuit {
            inner: Some(Pursuit::new(p, seed).map_err(err)?),
            outcome: None,
        })
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.as_ref().map_or(f64::NAN, |s| s.time())
    }

    /// `(x, y, alive)` per attacker.
    fn attackers(&self) -> Vec<(f64, f64, bool)> {
        self.inner
            .as_ref()
            .map(|s| s.attackers().iter().map(|a| (a.pos.x, a.pos.y, a.alive)).collect())
            .unwrap_or_default()
    }

    fn defenders(&self) -> Vec<(f64, f64, bool)> {
        self.inner
            .as_ref()
            .map(|s| s.defenders().iter().map(|a| (a.pos.x, a.pos.y, a.alive)).collect())
            .unwrap_or_default()
    }

    /// Advances one step; returns the outcome dict once the engagement ends.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        if let Some(o) = &self.outcome {
            return to_py(py, o).map(Some);
        }
        let sim = self.inner.as_mut().expect("present until finished");
        match sim.step().map_err(err)? {
            Some(o) => {
                self.outcome = Some(o);
                to_py(py, &o).map(Some)
            }
            None => Ok(None),
        }
    }

    /// Steps until the engagement ends and returns the outcome dict.
    fn run<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        loop {
            if let Some(o) = self.step(py)? {
                return Ok(o);
            }
        }
    }
}

#[pymodule]
fn swarmscale_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_params, m)?)?;
    m.add_function(wrap_pyfunction!(expand_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(read_records, m)?)?;
    m.add_function(wrap_pyfunction!(collapse, m)?)?;
    m.add_function(wrap_pyfunction!(tanh_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tanh, m)?)?;
    m.add_function(wrap_pyfunction!(fit_powerlaw, m)?)?;
    m.add_function(wrap_pyfunction!(fit_breakpoint, m)?)?;
    m.add_function(wrap_pyfunction!(predict_ndeff, m)?)?;
    m.add_function(wrap_pyfunction!(compute_neff_search, m)?)?;
    m.add_function(wrap_pyfunction!(intercept_point, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(path_length, m)?)?;
    m.add_class::<PyPursuit>()?;
    Ok(())
}
