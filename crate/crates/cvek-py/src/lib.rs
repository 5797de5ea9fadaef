//! Python bindings for the `cvek` library.
//!
//! The module exposes the main operations with plain Python types (floats,
//! lists, dicts): kernel evaluation and Gram construction, the REML null fit,
//! the interaction test (fixed kernels, named strategies, or ensemble
//! libraries), ensemble weight fitting, and the Monte-Carlo scenario runner
//! (JSON in/out).

use cvek::ensemble::cvek as cvek_fit_impl;
use cvek::interaction::{build_interaction_kernels, interaction_test_cvek};
use cvek::kernel::{center_gram, eval_kernel as eval_kernel_impl, gram_matrix, KernelSpec};
use cvek::null_model::fit_null_reml;
use cvek::simulate::{run_scenario, SimScenario};
use cvek::strategy::{run_strategy_with_options, Strategy, StrategyOptions};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py_err(e: cvek::Error) -> PyErr {
    match e {
        cvek::Error::InvalidInput(_) | cvek::Error::InvalidSpec(_) | cvek::Error::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_spec(text: &str) -> PyResult<KernelSpec> {
    text.parse::<KernelSpec>().map_err(to_py_err)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, name: &str) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{name} has no rows")));
    }
    let width = rows[0].len();
    if width == 0 {
        return Err(PyValueError::new_err(format!("{name} has empty rows")));
    }
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{name} has ragged rows")));
    }
    let n = rows.len();
    Ok(DMatrix::from_fn(n, width, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn result_to_dict<'py>(
    py: Python<'py>,
    result: &cvek::score::TestResult,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t0", result.t0)?;
    d.set_item("kappa", result.kappa)?;
    d.set_item("nu", result.nu)?;
    d.set_item("p_value", result.p_value)?;
    d.set_item("info", result.info)?;
    d.set_item("flags", result.flags.labels())?;
    Ok(d)
}

/// Evaluate a kernel (given in canonical text form) on two feature vectors.
#[pyfunction]
fn eval_kernel(spec: &str, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval_kernel_impl(&parse_spec(spec)?, &x, &y).map_err(to_py_err)
}

/// Gram matrix of a kernel over sample rows, optionally double-centered.
#[pyfunction]
#[pyo3(signature = (spec, x, center = false))]
fn gram(spec: &str, x: Vec<Vec<f64>>, center: bool) -> PyResult<Vec<Vec<f64>>> {
    let matrix = rows_to_matrix(x, "x")?;
    let mut g = gram_matrix(&parse_spec(spec)?, &matrix).map_err(to_py_err)?;
    if center {
        g = center_gram(&g);
    }
    Ok(matrix_to_rows(g.values()))
}

/// REML fit of the null model `y = mu + h + eps` with `h ~ N(0, tau*K)`.
/// Returns a dict with `mu`, `tau`, `sigma2`, `lambda`, and `reml_value`.
#[pyfunction]
#[pyo3(signature = (spec, x, y, center = true))]
fn null_fit<'py>(
    py: Python<'py>,
    spec: &str,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    center: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let matrix = rows_to_matrix(x, "x")?;
    let mut gram = gram_matrix(&parse_spec(spec)?, &matrix).map_err(to_py_err)?;
    if center {
        gram = center_gram(&gram);
    }
    let fit = fit_null_reml(gram, &DVector::from_vec(y)).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("mu", fit.mu_hat)?;
    d.set_item("tau", fit.tau_hat)?;
    d.set_item("sigma2", fit.sigma2_hat)?;
    d.set_item("lambda", fit.lambda())?;
    d.set_item("reml_value", fit.reml_value)?;
    Ok(d)
}

/// Interaction test with a fixed kernel per feature group.
#[pyfunction]
#[pyo3(signature = (spec1, spec2, x1, x2, y, center = true))]
fn interaction_test<'py>(
    py: Python<'py>,
    spec1: &str,
    spec2: &str,
    x1: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    y: Vec<f64>,
    center: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let m1 = rows_to_matrix(x1, "x1")?;
    let m2 = rows_to_matrix(x2, "x2")?;
    let kernels = build_interaction_kernels(&parse_spec(spec1)?, &parse_spec(spec2)?, &m1, &m2, center)
        .map_err(to_py_err)?;
    let result =
        cvek::interaction::interaction_test(&kernels, &DVector::from_vec(y)).map_err(to_py_err)?;
    result_to_dict(py, &result)
}

/// Interaction test with an ensemble null kernel over a custom library.
#[pyfunction]
fn interaction_test_ensemble<'py>(
    py: Python<'py>,
    library: Vec<String>,
    x1: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    y: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let specs: Vec<KernelSpec> = library
        .iter()
        .map(|s| parse_spec(s))
        .collect::<PyResult<_>>()?;
    let m1 = rows_to_matrix(x1, "x1")?;
    let m2 = rows_to_matrix(x2, "x2")?;
    let result = interaction_test_cvek(&specs, &m1, &m2, &DVector::from_vec(y)).map_err(to_py_err)?;
    result_to_dict(py, &result)
}

/// Interaction test under a named strategy tag (see `strategies()`).
#[pyfunction]
#[pyo3(signature = (strategy, x1, x2, y, sigma_hint = None, center = true))]
fn strategy_test<'py>(
    py: Python<'py>,
    strategy: &str,
    x1: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    y: Vec<f64>,
    sigma_hint: Option<f64>,
    center: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let tag: Strategy = strategy.parse().map_err(to_py_err)?;
    let m1 = rows_to_matrix(x1, "x1")?;
    let m2 = rows_to_matrix(x2, "x2")?;
    let options = StrategyOptions {
        sigma_hint,
        rbf_median_literal: false,
        center,
    };
    let result = run_strategy_with_options(tag, &m1, &m2, &DVector::from_vec(y), &options)
        .map_err(to_py_err)?;
    result_to_dict(py, &result)
}

/// Fit a cross-validated kernel ensemble. Returns a dict with per-kernel
/// `weights`, tuned `lambdas`, and the reconstruction `clip_events` count.
#[pyfunction]
fn ensemble_fit<'py>(
    py: Python<'py>,
    library: Vec<String>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let specs: Vec<KernelSpec> = library
        .iter()
        .map(|s| parse_spec(s))
        .collect::<PyResult<_>>()?;
    let matrix = rows_to_matrix(x, "x")?;
    let fit = cvek_fit_impl(&specs, &matrix, &DVector::from_vec(y)).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("weights", fit.weights.iter().copied().collect::<Vec<f64>>())?;
    d.set_item(
        "lambdas",
        fit.base_fits
            .iter()
            .map(|b| b.lambda_hat)
            .collect::<Vec<f64>>(),
    )?;
    d.set_item("clip_events", fit.clip_events)?;
    Ok(d)
}

/// Run one Monte-Carlo scenario from a JSON object (same schema as the CLI's
/// `[[scenario]]` tables). Returns the summary cells as a JSON string.
#[pyfunction]
fn simulate(config_json: &str) -> PyResult<String> {
    let scenario: SimScenario = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("scenario config: {e}")))?;
    let report = run_scenario(&scenario).map_err(to_py_err)?;
    serde_json::to_string(&report.cells)
        .map_err(|e| PyRuntimeError::new_err(format!("cannot encode report: {e}")))
}

/// All strategy tags, in canonical order.
#[pyfunction]
fn strategies<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
    PyList::new(py, Strategy::ALL.iter().map(|s| s.tag()))
}

#[pymodule]
fn cvek_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(eval_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gram, m)?)?;
    m.add_function(wrap_pyfunction!(null_fit, m)?)?;
    m.add_function(wrap_pyfunction!(interaction_test, m)?)?;
    m.add_function(wrap_pyfunction!(interaction_test_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(strategy_test, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(strategies, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
