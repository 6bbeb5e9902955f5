//! Python bindings: grids, states, the integrator, norms and scenario runs.
//!
//! Fields cross the boundary as flat lists in row-major (C) order.

use std::path::PathBuf;

use kgflow::config::RunConfig;
use kgflow::diagnostics::{self, ScatterVerdict};
use kgflow::lpbesov::{LpBank, NormSpec};
use kgflow::solver::{self, SolveConfig};
use kgflow::{random, scenarios, snapshot, spectral};
use kgflow::{Grid, KgError, RealField, StateVec, Trajectory};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: KgError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn field(grid: Grid, data: Vec<f64>) -> PyResult<RealField> {
    RealField::from_vec(grid, data).map_err(err)
}

#[pyclass(name = "Grid", module = "kgflow_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (dim, n, length, mass = 1.0))]
    fn new(dim: usize, n: usize, length: f64, mass: f64) -> PyResult<Self> {
        Grid::new(dim, n, length, mass).map(PyGrid).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.0.mass()
    }

    #[getter]
    fn cell(&self) -> f64 {
        self.0.cell()
    }

    /// Coordinates along one axis (the same for every axis).
    fn axis(&self) -> Vec<f64> {
        (0..self.0.n()).map(|i| self.0.coordinate(i)).collect()
    }

    fn default_dt(&self) -> f64 {
        solver::default_dt(self.0, true)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(dim={}, n={}, length={}, mass={})",
            self.0.dim(),
            self.0.n(),
            self.0.length(),
            self.0.mass()
        )
    }
}

#[pyclass(name = "State", module = "kgflow_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyState(StateVec);

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (grid, u, udot = None))]
    fn new(grid: &PyGrid, u: Vec<f64>, udot: Option<Vec<f64>>) -> PyResult<Self> {
        let g = grid.0;
        let u = field(g, u)?;
        let udot = match udot {
            Some(v) => field(g, v)?,
            None => RealField::zeros(g),
        };
        StateVec::new(u, udot).map(PyState).map_err(err)
    }

    /// `amplitude * exp(-|x - center|^2 / (2 width^2))` at rest.
    #[staticmethod]
    #[pyo3(signature = (grid, amplitude, width, center = None))]
    fn gaussian(grid: &PyGrid, amplitude: f64, width: f64, center: Option<Vec<f64>>) -> PyResult<Self> {
        let g = grid.0;
        let c = center.unwrap_or_else(|| vec![0.0; g.dim()]);
        if c.len() != g.dim() {
            return Err(PyValueError::new_err("center needs one entry per dimension"));
        }
        Ok(PyState(StateVec {
            u: random::gaussian(g, amplitude, width, &c),
            udot: RealField::zeros(g),
        }))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        snapshot::load_state(&path).map(PyState).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        snapshot::save_state(&path, &self.0).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid())
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.0.u.data.clone()
    }

    #[getter]
    fn udot(&self) -> Vec<f64> {
        self.0.udot.data.clone()
    }

    /// Energy and its parts; the quartic term is negated when `focusing`.
    #[pyo3(signature = (focusing = false))]
    fn energy<'py>(&self, py: Python<'py>, focusing: bool) -> PyResult<Bound<'py, PyDict>> {
        let e = diagnostics::energy_signed(&self.0, focusing);
        let d = PyDict::new(py);
        d.set_item("energy", e.energy)?;
        d.set_item("kinetic", e.kinetic)?;
        d.set_item("gradient", e.gradient)?;
        d.set_item("mass", e.mass)?;
        d.set_item("potential", e.potential)?;
        Ok(d)
    }

    /// `||(u, u_t)||` in `H^{s_c} x H^{s_c - 1}`.
    fn critical_norm(&self) -> f64 {
        self.0.critical_norm()
    }

    fn free_propagate(&self, t: f64) -> PyState {
        PyState(spectral::free_propagate(&self.0, t))
    }
}

#[pyclass(name = "SolveConfig", module = "kgflow_py", skip_from_py_object)]
#[derive(Clone)]
struct PySolveConfig(SolveConfig);

#[pymethods]
impl PySolveConfig {
    /// `dt` defaults to the largest stable power of two for `grid`.
    #[new]
    #[pyo3(signature = (grid, t_final, dt = None, sample_every = 1))]
    fn new(grid: &PyGrid, t_final: f64, dt: Option<f64>, sample_every: usize) -> PyResult<Self> {
        let dt = dt.unwrap_or_else(|| solver::default_dt(grid.0, true));
        let cfg = SolveConfig::new(dt, t_final).with_sample_every(sample_every);
        cfg.validate(grid.0).map_err(err)?;
        Ok(PySolveConfig(cfg))
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.0.t_final
    }

    #[setter]
    fn set_t_final(&mut self, v: f64) {
        self.0.t_final = v;
    }

    #[getter]
    fn sample_every(&self) -> usize {
        self.0.sample_every
    }

    #[setter]
    fn set_sample_every(&mut self, v: usize) {
        self.0.sample_every = v;
    }

    #[getter]
    fn focusing(&self) -> bool {
        self.0.focusing
    }

    #[setter]
    fn set_focusing(&mut self, v: bool) {
        self.0.focusing = v;
    }

    #[getter]
    fn residual_tol(&self) -> f64 {
        self.0.residual_tol
    }

    #[setter]
    fn set_residual_tol(&mut self, v: f64) {
        self.0.residual_tol = v;
    }
}

#[pyclass(name = "Trajectory", module = "kgflow_py", frozen, skip_from_py_object)]
struct PyTrajectory(Trajectory);

fn status_name(t: &Trajectory) -> String {
    serde_json::to_value(t.status)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    #[getter]
    fn steps(&self) -> Vec<u64> {
        self.0.steps.clone()
    }

    #[getter]
    fn energies(&self) -> Vec<f64> {
        self.0.energies.clone()
    }

    #[getter]
    fn duhamel_residual(&self) -> Vec<f64> {
        self.0.duhamel_residual.clone()
    }

    /// `complete`, `blowup_suspected` or `tolerance_fail`.
    #[getter]
    fn status(&self) -> String {
        status_name(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn state(&self, i: isize) -> PyResult<PyState> {
        let n = self.0.len() as isize;
        let k = if i < 0 { n + i } else { i };
        if k < 0 || k >= n {
            return Err(PyValueError::new_err("sample index out of range"));
        }
        Ok(PyState(self.0.states[k as usize].clone()))
    }

    /// Per-sample diagnostics as CSV text (the `diagnostics.csv` layout).
    #[pyo3(signature = (focusing = false))]
    fn diagnostics_csv(&self, focusing: bool) -> PyResult<String> {
        let origin = vec![0.0; self.0.grid.dim()];
        let records = diagnostics::diagnostics_table(&self.0, &origin, focusing).map_err(err)?;
        let mut buf = Vec::new();
        diagnostics::write_csv(&records, self.0.grid.dim(), &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// `(verdict, [(t, residual), ...])`; the verdict is `scatters` or
    /// `inconclusive`.
    fn scattering(&self, tol: f64) -> PyResult<(String, Vec<(f64, f64)>)> {
        let r = diagnostics::scattering_detect(&self.0, tol).map_err(err)?;
        let v = match r.verdict {
            ScatterVerdict::Scatters => "scatters",
            ScatterVerdict::Inconclusive => "inconclusive",
        };
        Ok((v.to_string(), r.cauchy_residuals))
    }

    /// Scattering-size norm of `u` on `[start, end]` (whole run by default).
    #[pyo3(signature = (start = None, end = None))]
    fn scattering_size(&self, start: Option<f64>, end: Option<f64>) -> PyResult<f64> {
        let t = &self.0;
        let spec = NormSpec::scattering(t.grid.dim())
            .annihilating()
            .on(start.unwrap_or(t.first_time()), end.unwrap_or(t.last_time()));
        LpBank::new(t.grid).strichartz_norm(t, &spec).map_err(err)
    }
}

#[pyfunction]
fn evolve(state: &PyState, cfg: &PySolveConfig) -> PyResult<PyTrajectory> {
    solver::evolve(&state.0, &cfg.0).map(PyTrajectory).map_err(err)
}

/// Runs to `horizon` in segments of `cfg.t_final`, halving the step once if a
/// segment trips the blowup detector.
#[pyfunction]
fn continue_maximal(state: &PyState, cfg: &PySolveConfig, horizon: f64) -> PyResult<PyTrajectory> {
    solver::continue_maximal(&state.0, &cfg.0, horizon)
        .map(PyTrajectory)
        .map_err(err)
}

/// `B^s_{r,2}` norm of a real field (homogeneous if asked; the mean is then
/// dropped).
#[pyfunction]
#[pyo3(signature = (grid, data, s, r = 2.0, homogeneous = false))]
fn besov_norm(grid: &PyGrid, data: Vec<f64>, s: f64, r: f64, homogeneous: bool) -> PyResult<f64> {
    let f = field(grid.0, data)?.to_spectral();
    let spec = if homogeneous {
        NormSpec::homogeneous_besov(s, r).annihilating()
    } else {
        NormSpec::besov(s, r)
    };
    LpBank::new(grid.0).besov_norm(&f, &spec).map_err(err)
}

#[pyfunction]
fn sobolev_norm(grid: &PyGrid, data: Vec<f64>, s: f64) -> PyResult<f64> {
    Ok(field(grid.0, data)?.to_spectral().sobolev_norm(s))
}

/// Runs a scenario from TOML text plus `key=value` overrides and returns its
/// summary. Artifacts go to `out` (or the config's `output`).
#[pyfunction]
#[pyo3(signature = (config = "", overrides = Vec::new(), out = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    config: &str,
    overrides: Vec<String>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::from_toml_str(config, &overrides).map_err(err)?;
    if let Some(o) = out {
        cfg.output = o;
    }
    let outcome = py.detach(|| scenarios::run(&cfg)).map_err(err)?;
    json_to_py(py, &outcome.summary)
}

/// Merged report over every `summary.json` under `dir`.
#[pyfunction]
#[pyo3(signature = (dir, baseline = None))]
fn report<'py>(py: Python<'py>, dir: PathBuf, baseline: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let r = scenarios::report(&dir, baseline.as_deref()).map_err(err)?;
    json_to_py(py, &r.summary)
}

#[pymodule]
pub fn kgflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PySolveConfig>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(continue_maximal, m)?)?;
    m.add_function(wrap_pyfunction!(besov_norm, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_norm, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
