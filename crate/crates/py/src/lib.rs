//! Python bindings. Matrices come back as nested lists, samples as lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chaos_wishart::chaos;
use chaos_wishart::config::{ExperimentConfig, ExperimentKind};
use chaos_wishart::fractional::{self, HurstParam};
use chaos_wishart::harness;
use chaos_wishart::metrics;
use chaos_wishart::rng::{Purpose, StreamId};
use chaos_wishart::rosenblatt::{self, Backend, GridOptions, RosenblattKernelGrid, RosenblattPath};
use chaos_wishart::wishart::{self, RenormMode};
use chaos_wishart::{acceptance, Error};
use ndarray::Array2;
use pyo3::exceptions::{PyMemoryError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Resource(_) => PyMemoryError::new_err(e.to_string()),
        Error::Io(_) | Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn hurst(h: f64) -> PyResult<HurstParam> {
    HurstParam::new(h).map_err(py_err)
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(v: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = v.len();
    let m = v.first().map_or(0, Vec::len);
    if v.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((n, m), v.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamId {
    StreamId::new(seed, purpose, index)
}

/// Normalized Hermite polynomial `H_n(x) = He_n(x) / n!`.
#[pyfunction]
fn hermite(n: usize, x: f64) -> PyResult<f64> {
    chaos::hermite_eval(n, x).map_err(py_err)
}

/// Fourth moment of a unit-variance rank-one chaos of order `q`.
#[pyfunction]
fn m4(q: usize) -> PyResult<f64> {
    chaos::m4_of_rank_one_chaos(q).map_err(py_err)
}

/// Autocorrelation of fractional Gaussian noise at lag `k`.
#[pyfunction]
fn rho(h: f64, k: i64) -> PyResult<f64> {
    Ok(fractional::rho(hurst(h)?, k))
}

#[pyfunction]
#[pyo3(signature = (h, d, seed, index = 0))]
fn fgn(h: f64, d: usize, seed: u64, index: u64) -> PyResult<Vec<f64>> {
    fractional::simulate_fgn(hurst(h)?, d, stream(seed, Purpose::Noise, index)).map_err(py_err)
}

/// Rosenblatt kernel constants `d(H)`, `c(H)`, `c_{1,H}`.
#[pyfunction]
fn constants(py: Python<'_>, h: f64) -> PyResult<Py<PyDict>> {
    let c = rosenblatt::make_constants(hurst(h)?).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("d_h", c.d_h)?;
    out.set_item("c_h", c.c_h)?;
    out.set_item("c1_h", c.c1_h)?;
    out.set_item("e_h", c.e_h)?;
    out.set_item("f_h", c.f_h)?;
    Ok(out.unbind())
}

/// Discretized Rosenblatt kernel on `ratio * d` cells with t-points `k/d`.
#[pyclass(name = "KernelGrid", module = "chaos_wishart_py")]
struct PyKernelGrid {
    inner: RosenblattKernelGrid,
}

#[pymethods]
impl PyKernelGrid {
    #[new]
    #[pyo3(signature = (h, d, ratio = 8, backend = "circulant"))]
    fn new(h: f64, d: usize, ratio: usize, backend: &str) -> PyResult<Self> {
        let backend = match backend {
            "circulant" => Backend::Circulant,
            "causal" => Backend::Causal,
            other => return Err(PyValueError::new_err(format!("unknown backend {other}"))),
        };
        let h = hurst(h)?;
        let options = GridOptions { backend, ..GridOptions::default() };
        let inner = rosenblatt::build_grid_for(h, d, ratio, options).map_err(py_err)?;
        Ok(PyKernelGrid { inner })
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells()
    }

    #[getter]
    fn hurst(&self) -> f64 {
        self.inner.hurst().value()
    }

    /// `2 |A_t|^2`, which equals `t^{2H}`.
    fn two_norm_sq(&self, t: f64) -> PyResult<f64> {
        self.inner.two_norm_sq(t).map_err(py_err)
    }

    #[pyo3(signature = (d, seed, index = 0))]
    fn simulate(&self, d: usize, seed: u64, index: u64) -> PyResult<PyRosenblattPath> {
        let inner = rosenblatt::simulate_path(&self.inner, d, stream(seed, Purpose::Path, index)).map_err(py_err)?;
        Ok(PyRosenblattPath { inner })
    }

    /// `(T2, T4)` split of `V_d` for a path drawn on this grid.
    fn decompose(&self, path: &PyRosenblattPath, d: usize) -> PyResult<(f64, f64)> {
        rosenblatt::decompose_v_at(&path.inner, &self.inner, d).map_err(py_err)
    }

    /// Fourth-chaos part of `V_d` computed from Wick products.
    fn t4_direct(&self, path: &PyRosenblattPath, d: usize) -> PyResult<f64> {
        rosenblatt::t4_direct_at(&path.inner, &self.inner, d).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("KernelGrid(h={}, cells={})", self.inner.hurst().value(), self.inner.cells())
    }
}

#[pyclass(name = "RosenblattPath", module = "chaos_wishart_py")]
struct PyRosenblattPath {
    inner: RosenblattPath,
}

#[pymethods]
impl PyRosenblattPath {
    /// `Z_{k/d}` for `k = 0..=d`.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn terminal(&self) -> f64 {
        self.inner.terminal()
    }

    fn increments(&self, d: usize) -> PyResult<Vec<f64>> {
        self.inner.integer_increments(d).map_err(py_err)
    }

    fn v_statistic(&self, d: usize) -> PyResult<f64> {
        rosenblatt::v_statistic_at(&self.inner, d).map_err(py_err)
    }
}

/// `n x d` entries, row `i` an independent chaos of order `orders[i]`.
#[pyfunction]
#[pyo3(signature = (orders, d, seed, index = 0))]
fn independent_entries(orders: Vec<usize>, d: usize, seed: u64, index: u64) -> PyResult<Vec<Vec<f64>>> {
    let x = wishart::gen_independent_entries(&orders, d, stream(seed, Purpose::Entries, index)).map_err(py_err)?;
    Ok(rows(&x.entries))
}

/// Renormalized independent-regime Wishart matrix `sqrt(d) (X X'/d - I)`.
#[pyfunction]
#[pyo3(signature = (orders, d, seed, index = 0))]
fn wishart_independent(orders: Vec<usize>, d: usize, seed: u64, index: u64) -> PyResult<Vec<Vec<f64>>> {
    let x = wishart::gen_independent_entries(&orders, d, stream(seed, Purpose::Entries, index)).map_err(py_err)?;
    let w = wishart::renormalize(&wishart::build_wishart(&x), RenormMode::Clt).map_err(py_err)?;
    Ok(rows(&w.w))
}

/// Renormalized correlated-regime Wishart matrix `d^{1-H} c_{1,H}^{-1} (X X'/d - I)`.
#[pyfunction]
#[pyo3(signature = (grid, n, d, seed, index = 0))]
fn wishart_correlated(grid: &PyKernelGrid, n: usize, d: usize, seed: u64, index: u64) -> PyResult<Vec<Vec<f64>>> {
    let h = grid.inner.hurst();
    let x = wishart::gen_correlated_entries(h, n, d, &grid.inner, stream(seed, Purpose::Path, index)).map_err(py_err)?;
    let w = wishart::renormalize(&wishart::build_wishart(&x), RenormMode::Rosenblatt(h)).map_err(py_err)?;
    Ok(rows(&w.w))
}

#[pyfunction]
#[pyo3(signature = (n, m4, seed, index = 0))]
fn goe(n: usize, m4: f64, seed: u64, index: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&wishart::sample_goe(n, m4, stream(seed, Purpose::Goe, index)).map_err(py_err)?))
}

#[pyfunction]
fn half_vector(w: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    wishart::half_vector(&matrix(w)?).map_err(py_err)
}

/// Exact W1 between two empirical laws on the line.
#[pyfunction]
fn w1(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::w1_exact_slices(&a, &b).map_err(py_err)
}

/// Sliced W1 between two samples of `dims`-vectors (flat, row-major).
#[pyfunction]
#[pyo3(signature = (a, b, dims, directions = 128, seed = 0))]
fn sliced_w1(a: Vec<f64>, b: Vec<f64>, dims: usize, directions: usize, seed: u64) -> PyResult<f64> {
    let a = metrics::SampleSet::new(dims, a, "a").map_err(py_err)?;
    let b = metrics::SampleSet::new(dims, b, "b").map_err(py_err)?;
    metrics::sliced_w1(&a, &b, directions, stream(seed, Purpose::Directions, 0)).map_err(py_err)
}

/// `(slope, intercept, slope_stderr)` of a log-log fit.
#[pyfunction]
#[pyo3(signature = (ds, ys, stderrs = None))]
fn fit_power_law(ds: Vec<f64>, ys: Vec<f64>, stderrs: Option<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let f = metrics::fit_power_law(&ds, &ys, stderrs.as_deref()).map_err(py_err)?;
    Ok((f.slope, f.intercept, f.slope_stderr))
}

fn setting_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyString>() {
        return v.extract();
    }
    if let Ok(items) = v.extract::<Vec<Bound<'_, PyAny>>>() {
        let parts = items.iter().map(|x| x.str().map(|s| s.to_string())).collect::<PyResult<Vec<_>>>()?;
        return Ok(parts.join(","));
    }
    Ok(v.str()?.to_string())
}

/// Run an experiment. `kind` is `theorem1`, `theorem2`, `moments` or
/// `kernel-diag`; `settings` uses the config-file keys and must include
/// `seed`. With `out` set, the three output files are written there.
#[pyfunction]
#[pyo3(signature = (kind, settings, out = None))]
fn run_experiment(
    py: Python<'_>,
    kind: &str,
    settings: BTreeMap<String, Bound<'_, PyAny>>,
    out: Option<PathBuf>,
) -> PyResult<Py<PyDict>> {
    let kind = match kind {
        "theorem1" => ExperimentKind::Theorem1,
        "theorem2" => ExperimentKind::Theorem2,
        "moments" => ExperimentKind::Moments,
        "kernel-diag" => ExperimentKind::KernelDiag,
        other => return Err(PyValueError::new_err(format!("unknown experiment {other}"))),
    };
    if !settings.contains_key("seed") {
        return Err(PyValueError::new_err("settings must include a seed"));
    }
    let mut cfg = ExperimentConfig::defaults(kind, 0);
    for (k, v) in &settings {
        cfg.set(&k.replace('_', "-"), &setting_text(v)?).map_err(py_err)?;
    }
    cfg.validate().map_err(py_err)?;
    let output = py.allow_threads(|| harness::run(&cfg)).map_err(py_err)?;
    if let Some(dir) = &out {
        harness::write_outputs(dir, &cfg, &output).map_err(py_err)?;
    }
    let report = &output.report;
    let dict = PyDict::new(py);
    dict.set_item("fingerprint", report.fingerprint())?;
    dict.set_item("passed", report.passed())?;
    dict.set_item("csv", report.to_csv())?;
    let fits = report
        .fits
        .iter()
        .map(|f| (f.metric.clone(), (f.slope, f.slope_stderr)))
        .collect::<BTreeMap<_, _>>();
    dict.set_item("slopes", fits)?;
    let checks = report.checks.iter().map(|c| (c.name.clone(), c.pass)).collect::<BTreeMap<_, _>>();
    dict.set_item("checks", checks)?;
    Ok(dict.unbind())
}

/// Run acceptance criteria; returns `(id, passed, detail)` triples.
#[pyfunction]
#[pyo3(signature = (ids = None))]
fn selftest(py: Python<'_>, ids: Option<Vec<usize>>) -> PyResult<Vec<(usize, bool, String)>> {
    let ids = ids.unwrap_or_default();
    if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
        return Err(PyValueError::new_err(format!("no criterion {bad}")));
    }
    let outcomes = py.allow_threads(|| acceptance::run_all(&ids, |_| {}));
    Ok(outcomes.into_iter().map(|o| (o.id, o.pass, o.detail)).collect())
}

#[pymodule]
fn chaos_wishart_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernelGrid>()?;
    m.add_class::<PyRosenblattPath>()?;
    m.add_function(wrap_pyfunction!(hermite, m)?)?;
    m.add_function(wrap_pyfunction!(m4, m)?)?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(fgn, m)?)?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(independent_entries, m)?)?;
    m.add_function(wrap_pyfunction!(wishart_independent, m)?)?;
    m.add_function(wrap_pyfunction!(wishart_correlated, m)?)?;
    m.add_function(wrap_pyfunction!(goe, m)?)?;
    m.add_function(wrap_pyfunction!(half_vector, m)?)?;
    m.add_function(wrap_pyfunction!(w1, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_w1, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rejects_ragged_rows() {
        assert!(matrix(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        let m = matrix(vec![vec![1.0, 2.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(rows(&m), vec![vec![1.0, 2.0], vec![2.0, 5.0]]);
    }
}
