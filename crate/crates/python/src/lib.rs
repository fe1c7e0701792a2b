//! Python bindings for the `noiselab` crate.
//!
//! Structured results (check reports, sweep reports) cross the boundary as
//! JSON strings; the `noiselab` Python package decodes them.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use noiselab::config::Config;
use noiselab::models::QuadraticModel;
use noiselab::numkit::Vector;
use noiselab::optim::{Budget, Decay, Granularity, LrSchedule, OptimizerState};
use noiselab::report::{build_report, experiment_sweeps, format_lr, format_lr_cell, LrCell};
use noiselab::sde::{exact_variance_quadratic, run_default_check, CheckName};
use noiselab::sweep::{
    aggregate_best_k, run_sweep, select_optimal_lr, ErrorBarRule, GridPointSummary, LrPoint, Objective, RunConfig,
    RunOutcome, RunRecord, Task,
};
use noiselab::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Precondition(_)
        | Error::DimensionMismatch { .. }
        | Error::NotPsd { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn parse_budget(kind: &str, length: u64) -> PyResult<Budget> {
    match kind {
        "epochs" => Ok(Budget::Epochs { epochs: length }),
        "steps" => Ok(Budget::Steps { steps: length }),
        other => Err(PyValueError::new_err(format!("budget kind must be 'epochs' or 'steps', got {other:?}"))),
    }
}

/// Step-decay learning-rate schedule.
#[pyclass(name = "LrSchedule", module = "noiselab._noiselab", frozen)]
struct PyLrSchedule {
    inner: LrSchedule,
}

#[pymethods]
impl PyLrSchedule {
    /// `budget` is "epochs" or "steps"; give at most one of `gamma`
    /// (default 2) and `eps_final`.
    #[new]
    #[pyo3(signature = (eps0, budget, length, steps_per_epoch=1, gamma=None, eps_final=None, granularity=None))]
    fn new(
        eps0: f64,
        budget: &str,
        length: u64,
        steps_per_epoch: u64,
        gamma: Option<f64>,
        eps_final: Option<f64>,
        granularity: Option<&str>,
    ) -> PyResult<Self> {
        let budget = parse_budget(budget, length)?;
        let decay = match (gamma, eps_final) {
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give gamma or eps_final, not both")),
            (_, Some(f)) => Decay::Final(f),
            (g, None) => Decay::Gamma(g.unwrap_or(2.0)),
        };
        let granularity = match granularity {
            None => budget.default_granularity(),
            Some("epoch") => Granularity::Epoch,
            Some("step") => Granularity::Step,
            Some(other) => return Err(PyValueError::new_err(format!("unknown granularity {other:?}"))),
        };
        LrSchedule::new(eps0, decay, budget, steps_per_epoch, granularity).map(|inner| Self { inner }).map_err(py_err)
    }

    fn lr_at(&self, step: u64) -> f64 {
        self.inner.lr_at(step)
    }

    /// `(step, epoch, lr)` at the start, every change point and the end.
    fn table(&self) -> Vec<(u64, u64, f64)> {
        self.inner.table().iter().map(|r| (r.step, r.epoch, r.lr)).collect()
    }

    #[getter]
    fn total_steps(&self) -> u64 {
        self.inner.total_steps()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn __repr__(&self) -> String {
        format!("LrSchedule(eps0={}, gamma={}, total_steps={})", self.inner.eps0(), self.inner.gamma(), self.inner.total_steps())
    }
}

/// Per-example quadratic loss with Gaussian centers whose population
/// variance is exactly `center_var` per coordinate.
#[pyclass(name = "QuadraticModel", module = "noiselab._noiselab", frozen)]
struct PyQuadratic {
    inner: QuadraticModel,
}

#[pymethods]
impl PyQuadratic {
    #[new]
    #[pyo3(signature = (eigenvalues, n_examples, center_var=1.0, seed=0))]
    fn new(eigenvalues: Vec<f64>, n_examples: usize, center_var: f64, seed: u64) -> PyResult<Self> {
        exact_variance_quadratic(&eigenvalues, center_var, n_examples, seed).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_examples(&self) -> usize {
        self.inner.num_examples()
    }

    fn loss(&self, omega: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&omega)?;
        Ok(self.inner.loss(&omega))
    }

    fn excess_loss(&self, omega: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&omega)?;
        Ok(self.inner.excess_loss(&omega))
    }

    fn full_grad(&self, omega: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_dim(&omega)?;
        Ok(self.inner.full_grad(&omega).into_inner())
    }

    fn minibatch_grad(&self, omega: Vec<f64>, batch: Vec<usize>) -> PyResult<Vec<f64>> {
        self.check_dim(&omega)?;
        self.inner.minibatch_grad(&omega, &batch).map(Vector::into_inner).map_err(py_err)
    }

    /// Per-example gradient covariance `H Cov(c) H`, as rows.
    fn noise_covariance(&self) -> Vec<Vec<f64>> {
        let m = self.inner.noise_covariance();
        (0..m.dim()).map(|i| m.row(i).to_vec()).collect()
    }

    fn critical_lr(&self) -> PyResult<f64> {
        self.inner.critical_lr().map_err(py_err)
    }
}

impl PyQuadratic {
    fn check_dim(&self, omega: &[f64]) -> PyResult<()> {
        if omega.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!("expected {} coordinates, got {}", self.inner.dim(), omega.len())));
        }
        Ok(())
    }
}

/// Parameters and velocity of SGD or heavy-ball momentum.
#[pyclass(name = "Optimizer", module = "noiselab._noiselab")]
struct PyOptimizer {
    inner: OptimizerState,
}

#[pymethods]
impl PyOptimizer {
    #[new]
    #[pyo3(signature = (omega, momentum=0.0))]
    fn new(omega: Vec<f64>, momentum: f64) -> PyResult<Self> {
        let omega = Vector::new(omega).map_err(py_err)?;
        OptimizerState::new(omega, momentum).map(|inner| Self { inner }).map_err(py_err)
    }

    fn sgd_step(&mut self, grad: Vec<f64>, eps: f64) -> PyResult<()> {
        self.inner.sgd_step(&grad, eps).map_err(py_err)
    }

    fn momentum_step(&mut self, grad: Vec<f64>, eps: f64) -> PyResult<()> {
        self.inner.momentum_step(&grad, eps).map_err(py_err)
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.inner.omega.to_vec()
    }

    #[getter]
    fn velocity(&self) -> Vec<f64> {
        self.inner.velocity.to_vec()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step()
    }
}

#[pyfunction]
fn effective_lr(eps: f64, momentum: f64) -> PyResult<f64> {
    noiselab::optim::effective_lr(eps, momentum).map_err(py_err)
}

#[pyfunction]
fn temperature(eps_eff: f64, batch_size: usize) -> PyResult<f64> {
    if batch_size == 0 {
        return Err(PyValueError::new_err("batch size must be at least 1"));
    }
    Ok(noiselab::optim::temperature(eps_eff, batch_size))
}

/// Stationary variance of the 1-D discretized SDE.
#[pyfunction]
fn ou_stationary_variance(curvature: f64, noise: f64, eps: f64, temperature: f64) -> PyResult<f64> {
    noiselab::sde::ou_stationary_variance(curvature, noise, eps, temperature).map_err(py_err)
}

/// Runs one named check with its default setup; returns JSON reports.
#[pyfunction]
#[pyo3(signature = (name, seed=0))]
fn run_check(py: Python<'_>, name: &str, seed: u64) -> PyResult<String> {
    let name = CheckName::parse(name).map_err(py_err)?;
    let reports = py.allow_threads(|| run_default_check(name, seed)).map_err(py_err)?;
    to_json(&reports)
}

fn parse_objective(objective: &str) -> PyResult<Objective> {
    serde_json::from_value(serde_json::Value::String(objective.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown objective {objective:?}")))
}

fn parse_rule(rule: &str) -> PyResult<ErrorBarRule> {
    serde_json::from_value(serde_json::Value::String(rule.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown error-bar rule {rule:?}")))
}

/// Best-`k` mean and sample std of run metrics; `None` marks a diverged run.
/// Returns `(mean, std, kept)`.
#[pyfunction]
#[pyo3(signature = (values, k, objective="max-test-accuracy"))]
fn aggregate(values: Vec<Option<f64>>, k: usize, objective: &str) -> PyResult<(f64, f64, usize)> {
    let objective = parse_objective(objective)?;
    let records: Vec<RunRecord> = values
        .iter()
        .enumerate()
        .map(|(i, v)| RunRecord {
            config: RunConfig::new(1.0, 1, Budget::Steps { steps: 0 }),
            run_index: i,
            seed: 0,
            outcome: match v {
                Some(x) => RunOutcome::Completed { train_loss: *x, test_metric: *x, steps: 0, curve: vec![] },
                None => RunOutcome::Diverged { step: 0 },
            },
        })
        .collect();
    let refs: Vec<&RunRecord> = records.iter().collect();
    let s = aggregate_best_k(LrPoint { lr: 1.0, eps_final: None }, &refs, k, objective);
    Ok((s.mean, s.std, s.kept))
}

/// Optimal rate and error bar from per-rate `(mean, std)`; returns
/// `(optimal_lr, errorbar_lrs, boundary_flag)`.
#[pyfunction]
#[pyo3(signature = (lrs, means, stds, objective="max-test-accuracy", rule="optimal-std"))]
fn select_optimal(
    lrs: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    objective: &str,
    rule: &str,
) -> PyResult<(f64, Vec<f64>, bool)> {
    if lrs.len() != means.len() || lrs.len() != stds.len() {
        return Err(PyValueError::new_err("lrs, means and stds must have the same length"));
    }
    let summaries: Vec<GridPointSummary> = lrs
        .iter()
        .zip(means.iter().zip(&stds))
        .map(|(&lr, (&mean, &std))| GridPointSummary {
            lr,
            eps_final: None,
            mean,
            std,
            kept: usize::from(mean.is_finite()),
            completed: usize::from(mean.is_finite()),
            runs: 1,
            train_loss_mean: f64::NAN,
            train_loss_std: f64::NAN,
            test_metric_mean: f64::NAN,
            test_metric_std: f64::NAN,
        })
        .collect();
    let sel = select_optimal_lr(&summaries, parse_objective(objective)?, parse_rule(rule)?).map_err(py_err)?;
    Ok((sel.optimal_lr, sel.errorbar.iter().map(|&i| lrs[i]).collect(), sel.boundary_flag))
}

/// `2^k` for powers of two, decimal otherwise.
#[pyfunction]
#[pyo3(name = "format_lr")]
fn py_format_lr(lr: f64) -> String {
    format_lr(lr)
}

/// Report notation `opt (low to high)`.
#[pyfunction]
fn format_lr_range(optimal: f64, low: f64, high: f64) -> String {
    format_lr_cell(LrCell { optimal, low, high })
}

/// Number of training runs a TOML experiment config plans.
#[pyfunction]
fn planned_runs(config_toml: &str) -> PyResult<usize> {
    let cfg = Config::parse(config_toml).map_err(py_err)?;
    let mut total = 0;
    for s in experiment_sweeps(&cfg).map_err(py_err)? {
        total += s.spec.planned_runs().map_err(py_err)?;
    }
    Ok(total)
}

/// Runs a TOML experiment config and returns JSON with the report text, the
/// summary CSV and the aggregated result.
#[pyfunction]
#[pyo3(signature = (config_toml, seed=None))]
fn run_experiment(py: Python<'_>, config_toml: &str, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = Config::parse(config_toml).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = py
        .allow_threads(|| -> noiselab::Result<_> {
            let task = Task::build(cfg.model.as_ref().ok_or_else(|| Error::Config("missing [model] section".into()))?)?;
            let mut records = Vec::new();
            for s in experiment_sweeps(&cfg)? {
                records.extend(run_sweep(&task, &s.spec)?.records);
            }
            build_report(&cfg, &records)
        })
        .map_err(py_err)?;
    let result: serde_json::Value =
        serde_json::from_str(&report.result_json).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_json(&serde_json::json!({
        "text": report.text,
        "summary_csv": report.summary_csv,
        "result": result,
        "complete": report.complete,
        "all_diverged": report.all_diverged,
    }))
}

#[pymodule]
fn _noiselab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLrSchedule>()?;
    m.add_class::<PyQuadratic>()?;
    m.add_class::<PyOptimizer>()?;
    m.add_function(wrap_pyfunction!(effective_lr, m)?)?;
    m.add_function(wrap_pyfunction!(temperature, m)?)?;
    m.add_function(wrap_pyfunction!(ou_stationary_variance, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(select_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(py_format_lr, m)?)?;
    m.add_function(wrap_pyfunction!(format_lr_range, m)?)?;
    m.add_function(wrap_pyfunction!(planned_runs, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
