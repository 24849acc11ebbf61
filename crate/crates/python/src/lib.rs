use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sohcast_core::backtest::{self, WalkForwardSpec, WindowMode};
use sohcast_core::config::PipelineConfig;
use sohcast_core::emd::{decompose as emd_decompose, DecomposeSpec};
use sohcast_core::hilbert::analytic_signal;
use sohcast_core::reframe::{make_frame, FrameSpec};
use sohcast_core::series::DailySeries;
use sohcast_core::trees::EnsembleSpec;
use sohcast_core::Error;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 | 3 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Decompose a signal into IMFs (highest frequency first) and a residue.
#[pyfunction]
#[pyo3(signature = (signal, ensemble_size=100, noise_std=0.2, seed=0))]
fn decompose<'py>(
    py: Python<'py>,
    signal: Vec<f64>,
    ensemble_size: usize,
    noise_std: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = DecomposeSpec {
        ensemble_size,
        noise_std,
        seed,
        ..DecomposeSpec::default()
    };
    let d = py.detach(|| emd_decompose(&signal, &spec)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("imfs", d.imfs)?;
    out.set_item("residue", d.residue)?;
    Ok(out)
}

/// Instantaneous amplitude, phase and frequency (cycles per sample).
#[pyfunction]
fn hilbert<'py>(py: Python<'py>, signal: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let a = analytic_signal(&signal).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("amplitude", a.amplitude)?;
    out.set_item("phase", a.phase)?;
    out.set_item("inst_freq", a.inst_freq)?;
    Ok(out)
}

/// MAE, RMSE, R2 and explained variance; R2/EVAR are None for constant truth.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, truth: Vec<f64>, predictions: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = backtest::metrics(&truth, &predictions).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("n", m.n)?;
    out.set_item("mae", m.mae)?;
    out.set_item("rmse", m.rmse)?;
    out.set_item("r2", m.r2)?;
    out.set_item("evar", m.evar)?;
    Ok(out)
}

/// Paired signed-rank test. Returns (statistic, p_value, same_distribution).
#[pyfunction]
#[pyo3(signature = (a, b, alpha=0.05))]
fn wilcoxon(a: Vec<f64>, b: Vec<f64>, alpha: f64) -> PyResult<(f64, f64, bool)> {
    let r = backtest::wilcoxon_signed_rank(&a, &b, alpha).map_err(to_py)?;
    Ok((r.statistic, r.p_value, r.same_distribution))
}

/// Walk-forward backtest of a boosted model on the lags of one series.
#[pyfunction]
#[pyo3(signature = (values, window=7, sample=30, roll=1, sliding=false, n_estimators=100, max_depth=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn walk_forward<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    window: usize,
    sample: usize,
    roll: usize,
    sliding: bool,
    n_estimators: usize,
    max_depth: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    if window < 2 {
        return Err(PyValueError::new_err("window must be at least 2"));
    }
    let start = chrono_start();
    let series = DailySeries::new(start, values.len())
        .with_channel("y", values)
        .map_err(to_py)?;
    let frame = make_frame(&series, &FrameSpec::new(&["y"], "y", window - 1, 1)).map_err(to_py)?;
    let mode = if sliding { WindowMode::Sliding } else { WindowMode::Expanding };
    let model = EnsembleSpec::gb(n_estimators, max_depth).with_seed(seed);
    let report = py
        .detach(|| backtest::walk_forward(&frame, &model, &WalkForwardSpec::new(sample, roll, mode)))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("truth", report.truth)?;
    out.set_item("predictions", report.predictions)?;
    out.set_item("naive", report.naive)?;
    out.set_item("ci_half_width", report.ci_half_width)?;
    out.set_item("train_sizes", report.iteration_log.iter().map(|l| l.train_size).collect::<Vec<_>>())?;
    out.set_item("mae", report.metrics.mae)?;
    out.set_item("rmse", report.metrics.rmse)?;
    out.set_item("naive_rmse", report.naive_metrics.rmse)?;
    Ok(out)
}

fn chrono_start() -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

/// Run the full pipeline from a TOML document; returns the summary as JSON.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = PipelineConfig::from_toml(config_toml).map_err(to_py)?;
    let summary = py.detach(|| sohcast_core::pipeline::run(&cfg)).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn sohcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(hilbert, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(walk_forward, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
