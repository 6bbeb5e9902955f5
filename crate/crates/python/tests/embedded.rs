//! Drives the module through an embedded interpreter.

use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module<F: FnOnce(&Bound<'_, PyDict>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "kgflow_py").unwrap();
        kgflow_py::kgflow_py(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("kg", m).unwrap();
        globals.set_item("math", py.import("math").unwrap()).unwrap();
        f(&globals);
    });
}

fn run(globals: &Bound<'_, PyDict>, code: &std::ffi::CStr) {
    let py = globals.py();
    if let Err(e) = py.run(code, Some(globals), None) {
        panic!("{e}");
    }
}

#[test]
fn cosine_flow_and_energy() {
    with_module(|g| {
        run(
            g,
            c"
grid = kg.Grid(1, 16, 2 * math.pi)
s = kg.State(grid, [math.cos(x) for x in grid.axis()])
out = s.free_propagate(1.0)
w = math.sqrt(2.0)
assert max(abs(a - math.cos(x) * math.cos(w)) for a, x in zip(out.u, grid.axis())) < 1e-12
assert max(abs(a + w * math.cos(x) * math.sin(w)) for a, x in zip(out.udot, grid.axis())) < 1e-12
e = s.energy()
assert abs(e['energy'] - sum(e[k] for k in ('kinetic', 'gradient', 'mass', 'potential'))) < 1e-14
assert s.energy(focusing=True)['energy'] < e['energy']
",
        );
    });
}

#[test]
fn evolve_and_read_back_diagnostics() {
    with_module(|g| {
        run(
            g,
            c"
grid = kg.Grid(2, 32, 16.0)
s = kg.State.gaussian(grid, 0.25, 1.0, [1.0, -1.0])
cfg = kg.SolveConfig(grid, 2.0, sample_every=8)
assert cfg.dt == grid.default_dt()
t = kg.evolve(s, cfg)
assert t.status == 'complete'
assert len(t) == len(t.times) == len(t.energies)
assert abs(t.times[-1] - 2.0) < 1e-12
rows = t.diagnostics_csv().strip().splitlines()
assert rows[0].startswith('time,energy,') and len(rows) == len(t) + 1
assert t.state(-1).u == t.state(len(t) - 1).u
",
        );
    });
}

#[test]
fn errors_become_value_errors() {
    with_module(|g| {
        run(
            g,
            c"
for bad in (lambda: kg.Grid(1, 7, 1.0), lambda: kg.Grid(0, 8, 1.0),
            lambda: kg.State(kg.Grid(1, 8, 1.0), [0.0] * 5),
            lambda: kg.run_scenario('scenario = \"nope\"')):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError('accepted')
",
        );
    });
}

#[test]
fn scenario_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    with_module(|g| {
        g.set_item("root", dir.path().to_str().unwrap()).unwrap();
        run(
            g,
            c"
import os
over = ['grid.dim=1', 'grid.n=64', 'grid.length=20', 'solve.T=1']
s = kg.run_scenario('scenario = \"evolve\"', over, os.path.join(root, 'a'))
assert s['scenario'] == 'evolve' and s['pass']
assert os.path.exists(os.path.join(root, 'a', 'diagnostics.csv'))
r = kg.report(root)
assert len(r['runs']) == 1 and not r['drift_flagged']
",
        );
    });
}
