//! Python bindings. Samples are passed as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use kbqd::baselines;
use kbqd::simulation::{run_scenario, to_csv_string, ScenarioConfig};
use kbqd::tuning::{self, AlternativeFamily};
use kbqd::{Bandwidth, Centering, DataMatrix, GroupedSamples, KbqdError, ResamplingPlan};

fn err(e: KbqdError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DataMatrix> {
    DataMatrix::from_rows(&rows).map_err(err)
}

fn grouped(samples: Vec<Vec<Vec<f64>>>) -> PyResult<GroupedSamples> {
    let mats = samples.into_iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
    GroupedSamples::new(mats).map_err(err)
}

fn bandwidth(h: f64) -> PyResult<Bandwidth> {
    Bandwidth::new(h).map_err(err)
}

fn plan(method: &str, b_count: usize, b: f64, alpha: f64, seed: u64) -> PyResult<ResamplingPlan> {
    let p = ResamplingPlan { method: method.parse().map_err(err)?, replications: b_count, subsample: b, alpha, seed };
    p.validate().map_err(err)?;
    Ok(p)
}

/// Outcome of a KBQD test.
#[pyclass(name = "TestResult", frozen, get_all)]
#[allow(non_snake_case)]
struct PyTestResult {
    statistic_trace: f64,
    statistic_tn: f64,
    critical_trace: f64,
    critical_tn: f64,
    pvalue_trace: f64,
    pvalue_tn: f64,
    reject_trace: bool,
    reject_tn: bool,
    h: f64,
    method: String,
    B: usize,
    seed: u64,
    standardized_tn: Option<f64>,
}

#[pymethods]
impl PyTestResult {
    fn __repr__(&self) -> String {
        format!(
            "TestResult(tn={:.6e}, critical_tn={:.6e}, pvalue_tn={:.4}, reject_tn={}, h={}, method={})",
            self.statistic_tn, self.critical_tn, self.pvalue_tn, self.reject_tn, self.h, self.method
        )
    }
}

#[pyfunction]
fn gaussian_kernel(x: Vec<f64>, y: Vec<f64>, h: f64) -> PyResult<f64> {
    kbqd::gaussian_kernel(&x, &y, bandwidth(h)?).map_err(err)
}

/// Uncentered Gram matrix of the rows of `z`.
#[pyfunction]
fn gram_matrix(z: Vec<Vec<f64>>, h: f64) -> PyResult<Vec<Vec<f64>>> {
    let g = kbqd::gram_matrix(&matrix(z)?, bandwidth(h)?).map_err(err)?;
    Ok((0..g.n()).map(|i| g.row(i).to_vec()).collect())
}

/// `(trace, tn)` for a list of samples.
#[pyfunction]
#[pyo3(signature = (samples, h, centering = "nonparametric"))]
fn test_statistics(samples: Vec<Vec<Vec<f64>>>, h: f64, centering: &str) -> PyResult<(f64, f64)> {
    let c: Centering = centering.parse().map_err(err)?;
    let s = kbqd::ksample_test_statistics(&grouped(samples)?, bandwidth(h)?, c).map_err(err)?;
    Ok((s.trace, s.tn))
}

/// KBQD test with resampled critical values.
#[pyfunction]
#[pyo3(signature = (samples, h, method = "subsampling", B = 150, b = 0.8, alpha = 0.05, seed = 0, centering = "nonparametric"))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn kbqd_test(
    samples: Vec<Vec<Vec<f64>>>,
    h: f64,
    method: &str,
    B: usize,
    b: f64,
    alpha: f64,
    seed: u64,
    centering: &str,
) -> PyResult<PyTestResult> {
    let c: Centering = centering.parse().map_err(err)?;
    let p = plan(method, B, b, alpha, seed)?;
    let r = kbqd::kbqd_test(&grouped(samples)?, bandwidth(h)?, c, &p).map_err(err)?;
    Ok(PyTestResult {
        statistic_trace: r.statistic_trace,
        statistic_tn: r.statistic_tn,
        critical_trace: r.critical_trace,
        critical_tn: r.critical_tn,
        pvalue_trace: r.pvalue_trace,
        pvalue_tn: r.pvalue_tn,
        reject_trace: r.reject_trace,
        reject_tn: r.reject_tn,
        h,
        method: p.method.to_string(),
        B,
        seed,
        standardized_tn: r.standardized_tn().map(|s| s.0),
    })
}

#[pyfunction]
fn mmd2_u(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, h: f64) -> PyResult<f64> {
    baselines::mmd2_u(&matrix(x)?, &matrix(y)?, bandwidth(h)?).map_err(err)
}

#[pyfunction]
fn energy_two_sample(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    baselines::energy_two_sample(&matrix(x)?, &matrix(y)?).map_err(err)
}

#[pyfunction]
fn energy_k_sample(samples: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    baselines::energy_k_sample(&grouped(samples)?).map_err(err)
}

/// Bandwidth selection. Returns `(h_star, achieved, [(h, delta, power), ...])`.
#[pyfunction]
#[pyo3(signature = (samples, family = "location", h_grid = None, N = 50, method = "subsampling", B = 150, b = 0.8, alpha = 0.05, seed = 0))]
#[allow(non_snake_case, clippy::too_many_arguments, clippy::type_complexity)]
fn select_h(
    samples: Vec<Vec<Vec<f64>>>,
    family: &str,
    h_grid: Option<Vec<f64>>,
    N: usize,
    method: &str,
    B: usize,
    b: f64,
    alpha: f64,
    seed: u64,
) -> PyResult<(f64, bool, Vec<(f64, f64, f64)>)> {
    let mut fam = AlternativeFamily::new(family.parse().map_err(err)?);
    if let Some(g) = h_grid {
        fam = fam.with_h_grid(g);
    }
    let r = tuning::select_h(&grouped(samples)?, &fam, &plan(method, B, b, alpha, seed)?, N).map_err(err)?;
    Ok((r.h_star.get(), r.achieved, r.power_table.iter().map(|e| (e.h, e.delta, e.power)).collect()))
}

/// Runs a scenario given as TOML text and returns the result CSV.
#[pyfunction]
fn simulate(config_toml: &str) -> PyResult<String> {
    let cfg = ScenarioConfig::from_toml_str(config_toml).map_err(err)?;
    to_csv_string(&run_scenario(&cfg).map_err(err)?).map_err(err)
}

#[pymodule]
fn kbqd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTestResult>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gram_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(test_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(kbqd_test, m)?)?;
    m.add_function(wrap_pyfunction!(mmd2_u, m)?)?;
    m.add_function(wrap_pyfunction!(energy_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(energy_k_sample, m)?)?;
    m.add_function(wrap_pyfunction!(select_h, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
