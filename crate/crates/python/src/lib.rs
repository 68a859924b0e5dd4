//! Python bindings. Reports cross the boundary as plain dicts.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use qcd_core::asymptotics::{asymptotic_constants, ConstantsOptions, OvershootOptions};
use qcd_core::exactsolve::{u2b_calibrate, u2b_performance_point, u2b_srp_threshold, U2bExact};
use qcd_core::montecarlo::{mc_estimate as core_mc_estimate, Metric};
use qcd_core::ocsolve::{
    calibrate as core_calibrate, CalibrateOptions, OcConfig, OcReport, OcSolver, ReportOptions, Start,
};
use qcd_core::procedures::run_detection;
use qcd_core::{make_model, ChangePointModel, ModelParams, ProcedureKind, ProcedureSpec, Regime};

fn py_err(e: qcd_core::Error) -> PyErr {
    if e.is_domain() || matches!(e, qcd_core::Error::Unsupported { .. }) {
        PyValueError::new_err(e.to_string())
    } else {
        PyArithmeticError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for qcd_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyArithmeticError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn regime(name: &str) -> PyResult<Regime> {
    match name {
        "pre" => Ok(Regime::Pre),
        "post" => Ok(Regime::Post),
        _ => Err(PyValueError::new_err(format!("regime must be 'pre' or 'post', got {name:?}"))),
    }
}

/// An iid change-point model.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ChangePointModel,
}

#[pymethods]
impl PyModel {
    /// `kind` is one of "beta", "exp-shift", "u2b", "exp-double".
    #[new]
    #[pyo3(signature = (kind, delta=None, theta=None))]
    fn new(kind: &str, delta: Option<f64>, theta: Option<f64>) -> PyResult<Self> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| PyValueError::new_err(format!("{kind} needs {name}")));
        let params = match kind {
            "beta" => ModelParams::Beta { delta: need(delta, "delta")? },
            "exp-shift" => ModelParams::ExpShift { theta: need(theta, "theta")? },
            "u2b" => ModelParams::U2b,
            "exp-double" => ModelParams::ExpDouble,
            _ => return Err(PyValueError::new_err(format!("unknown model {kind:?}"))),
        };
        Ok(PyModel { inner: make_model(params).py()? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    fn kl_number(&self) -> PyResult<f64> {
        self.inner.kl_number().py()
    }

    fn lr(&self, x: f64) -> f64 {
        self.inner.lr(x)
    }

    #[pyo3(signature = (regime_name, n, seed=0))]
    fn sample(&self, regime_name: &str, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        self.inner.sample(regime(regime_name)?, n, seed).py()
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner.name())
    }
}

fn config(grid: usize) -> OcConfig {
    OcConfig::default().with_grid(grid)
}

// Fixed-start procedures; SRP is built from a solver.
fn fixed_kind(proc: &str, r: Option<f64>, p: Option<f64>, pi: f64) -> PyResult<ProcedureKind> {
    match proc {
        "sr" => Ok(ProcedureKind::Sr),
        "sr-r" => Ok(ProcedureKind::SrR { r: r.ok_or_else(|| PyValueError::new_err("sr-r needs r"))? }),
        "shiryaev" => Ok(ProcedureKind::Shiryaev { p: p.ok_or_else(|| PyValueError::new_err("shiryaev needs p"))?, pi }),
        _ => Err(PyValueError::new_err(format!("unknown procedure {proc:?}"))),
    }
}

fn kind_and_solver(
    model: &ChangePointModel,
    proc: &str,
    threshold: f64,
    r: Option<f64>,
    p: Option<f64>,
    pi: f64,
    grid: usize,
) -> PyResult<(ProcedureKind, OcSolver)> {
    if proc == "srp" {
        let solver = OcSolver::new(model, threshold, 1.0, config(grid)).py()?;
        let kind = solver.srp_kind().py()?;
        return Ok((kind, solver));
    }
    let kind = fixed_kind(proc, r, p, pi)?;
    let solver = OcSolver::for_kind(model, &kind, threshold, config(grid)).py()?;
    Ok((kind, solver))
}

/// Threshold with `E_inf[T] = gamma`.
#[pyfunction]
#[pyo3(signature = (model, proc, gamma, r=None, p=None, pi=0.0, grid=2000))]
fn calibrate(
    py: Python<'_>,
    model: &PyModel,
    proc: &str,
    gamma: f64,
    r: Option<f64>,
    p: Option<f64>,
    pi: f64,
    grid: usize,
) -> PyResult<Py<PyAny>> {
    let (scale, start) = if proc == "srp" {
        (1.0, Start::QuasiStationary)
    } else {
        let kind = fixed_kind(proc, r, p, pi)?;
        (kind.xi_scale(), Start::for_kind(&kind))
    };
    let c = py
        .detach(|| core_calibrate(&model.inner, scale, start, gamma, config(grid), CalibrateOptions::default()))
        .py()?;
    to_dict(py, &c.calibration)
}

/// Full operating-characteristic report at `threshold`.
#[pyfunction]
#[pyo3(signature = (model, proc, threshold, r=None, p=None, pi=0.0, grid=2000, prior=None, pfa_window=None, pfa_k_max=50))]
fn oc_report(
    py: Python<'_>,
    model: &PyModel,
    proc: &str,
    threshold: f64,
    r: Option<f64>,
    p: Option<f64>,
    pi: f64,
    grid: usize,
    prior: Option<(f64, f64)>,
    pfa_window: Option<usize>,
    pfa_k_max: usize,
) -> PyResult<Py<PyAny>> {
    let opts = ReportOptions { prior, local_pfa: pfa_window.map(|m| (m, pfa_k_max)), richardson: false };
    let report = py.detach(|| -> PyResult<OcReport> {
        let (kind, solver) = kind_and_solver(&model.inner, proc, threshold, r, p, pi, grid)?;
        OcReport::from_solver(&solver, &kind, opts).py()
    })?;
    to_dict(py, &report)
}

/// Runs a procedure over `observations`; stops at the first alarm.
#[pyfunction]
#[pyo3(signature = (model, proc, threshold, observations, r=None, p=None, pi=0.0, grid=2000, seed=0))]
fn detect(
    py: Python<'_>,
    model: &PyModel,
    proc: &str,
    threshold: f64,
    observations: Vec<f64>,
    r: Option<f64>,
    p: Option<f64>,
    pi: f64,
    grid: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let kind = if proc == "srp" { kind_and_solver(&model.inner, proc, threshold, r, p, pi, grid)?.0 } else { fixed_kind(proc, r, p, pi)? };
    let spec = ProcedureSpec::new(kind, threshold).py()?;
    let start = spec.starter().py()?.draw(&mut qcd_core::rng::stream_rng(seed, 0));
    let res = run_detection(&spec, observations, &model.inner, u64::MAX, start, None).py()?;
    to_dict(py, &res)
}

/// Large-threshold constants of `model`.
#[pyfunction]
#[pyo3(signature = (model, paths=1_000_000, seed=0x5eed))]
fn constants(py: Python<'_>, model: &PyModel, paths: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let opts = ConstantsOptions {
        overshoot: OvershootOptions { n_paths: paths, seed, ..Default::default() },
        ..Default::default()
    };
    let c = py.detach(|| asymptotic_constants(&model.inner, opts)).py()?;
    to_dict(py, &c)
}

/// Exact minimax analysis of the uniform-to-beta model at target ARL `gamma`.
#[pyfunction]
fn u2b_exact(py: Python<'_>, gamma: f64) -> PyResult<Py<PyAny>> {
    let point = u2b_performance_point(gamma).py()?;
    let (a, r) = u2b_calibrate(gamma).py()?;
    let e = U2bExact::new(a).py()?;
    let value = serde_json::json!({
        "curve": point,
        "arl": e.arl(r),
        "add0": e.add0(r),
        "add_inf": e.add_inf(),
        "stadd": e.stadd(r),
        "srp_threshold": u2b_srp_threshold(gamma).py()?,
    });
    to_dict(py, &value)
}

/// Monte Carlo estimate. `metric` is one of "arl", "add", "stadd",
/// "pfa_bayes", "add_bayes", "local_pfa".
#[pyfunction]
#[pyo3(signature = (model, proc, threshold, metric, r=None, nu=0, prior=(0.0, 0.01), k=0, m=1, n_reps=10_000, seed=0, grid=2000))]
fn mc_estimate(
    py: Python<'_>,
    model: &PyModel,
    proc: &str,
    threshold: f64,
    metric: &str,
    r: Option<f64>,
    nu: u64,
    prior: (f64, f64),
    k: u64,
    m: u64,
    n_reps: usize,
    seed: u64,
    grid: usize,
) -> PyResult<Py<PyAny>> {
    let metric = match metric {
        "arl" => Metric::Arl,
        "add" => Metric::Add { nu },
        "stadd" => Metric::Stadd { nu },
        "pfa_bayes" => Metric::BayesPfa { pi: prior.0, p: prior.1 },
        "add_bayes" => Metric::BayesAdd { pi: prior.0, p: prior.1 },
        "local_pfa" => Metric::LocalPfa { k, m },
        _ => return Err(PyValueError::new_err(format!("unknown metric {metric:?}"))),
    };
    let kind = if proc == "srp" { kind_and_solver(&model.inner, proc, threshold, r, None, 0.0, grid)?.0 } else { fixed_kind(proc, r, None, 0.0)? };
    let spec = ProcedureSpec::new(kind, threshold).py()?;
    let est = py.detach(|| core_mc_estimate(metric, &spec, &model.inner, n_reps, seed)).py()?;
    to_dict(py, &est)
}

#[pymodule]
fn qcd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(oc_report, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(u2b_exact, m)?)?;
    m.add_function(wrap_pyfunction!(mc_estimate, m)?)?;
    Ok(())
}
