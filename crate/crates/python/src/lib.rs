//! Python bindings: configuration, channel generation, the exhaustive
//! oracle, trained-model inference and the file-based pipeline stages.

use std::path::{Path, PathBuf};

use d2dra::channel::{generate_dataset, ChannelSample};
use d2dra::evaluation::{evaluate as evaluate_scheme, write_reports, EvalContext, MetricsReport};
use d2dra::io::{attach_labels, decode_labels, encode_dataset, encode_labels, encode_stats, read_dataset, read_stats, write_atomic};
use d2dra::models::bundle::{load_bundle, Manifest};
use d2dra::models::Model as CoreModel;
use d2dra::objective::{se_cue, se_d2d, Allocation};
use d2dra::oracle::{enumerate_count as count_candidates, Oracle};
use d2dra::runconfig::RunConfig;
use d2dra::stats::{compute_stats, DatasetStats};
use d2dra::training::{init_model, save_run, train as run_training};
use d2dra::{Error, Objective};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(d2dra, BudgetExceeded, PyException, "The exhaustive search would exceed its candidate budget.");
create_exception!(d2dra, D2draError, PyException, "Any other toolkit failure.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_) | Error::ShapeMismatch(_) => PyValueError::new_err(e.to_string()),
        Error::MissingDependency(_) | Error::MissingLabels(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::BudgetExceeded { .. } => BudgetExceeded::new_err(e.to_string()),
        _ => D2draError::new_err(e.to_string()),
    }
}

fn objective_or(config: &RunConfig, objective: Option<&str>) -> PyResult<Objective> {
    objective.map_or(Ok(config.train.objective), |o| o.parse().map_err(py_err))
}

/// Run configuration with `[system]`, `[train]` and `[eval]` sections.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Parses `toml` (empty means defaults) and applies `section.key=value`
    /// overrides in order.
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::parse_with(toml, &overrides).map_err(py_err)? })
    }

    /// A copy with further overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Self::new(&self.inner.to_text(), overrides)
    }

    fn to_toml(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn n_tps(&self) -> usize {
        self.inner.system.n_tps
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.inner.system.n_channels
    }

    #[getter]
    fn n_power_levels(&self) -> usize {
        self.inner.system.n_power_levels
    }

    #[getter]
    fn power_levels(&self) -> Vec<f64> {
        self.inner.system.power_levels.clone()
    }

    #[getter]
    fn se_threshold(&self) -> f64 {
        self.inner.system.se_threshold
    }

    /// Length of one channel realization, K(N+1)^2.
    #[getter]
    fn gains_len(&self) -> usize {
        self.inner.system.gains_len()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.system;
        format!("Config(n_tps={}, n_channels={}, n_power_levels={}, se_threshold={})", s.n_tps, s.n_channels, s.n_power_levels, s.se_threshold)
    }
}

fn sample(config: &PyConfig, gains: Vec<f64>) -> PyResult<ChannelSample> {
    let s = &config.inner.system;
    let sample = ChannelSample::new(s.n_tps, s.n_channels, gains).map_err(py_err)?;
    sample.check_dims(s).map_err(py_err)?;
    Ok(sample)
}

/// `count` channel realizations, each a flat `[k][rx][tx]` gain list.
#[pyfunction]
fn generate(config: &PyConfig, count: usize) -> Vec<Vec<f64>> {
    generate_dataset(&config.inner.system, count).into_iter().map(|s| s.gains().to_vec()).collect()
}

/// Number of distinct joint strategies the oracle scans.
#[pyfunction]
fn enumerate_count(config: &PyConfig) -> u128 {
    count_candidates(&config.inner.system)
}

/// Per-pair D2D SE and per-channel CUE SE of a hard allocation.
#[pyfunction]
fn spectral_efficiency(config: &PyConfig, gains: Vec<f64>, channel_idx: Vec<usize>, power_idx: Vec<usize>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = sample(config, gains)?;
    let alloc = Allocation::new(channel_idx, power_idx);
    alloc.check(&config.inner.system).map_err(py_err)?;
    let sys = &config.inner.system;
    Ok((se_d2d(&s, &alloc, sys).map_err(py_err)?, se_cue(&s, &alloc, sys).map_err(py_err)?))
}

/// Exhaustive optimum for one realization: a dict with `channel_idx`,
/// `power_idx`, `feasible` and `sum_se`.
#[pyfunction]
#[pyo3(signature = (config, gains, objective = None))]
fn solve<'py>(py: Python<'py>, config: &PyConfig, gains: Vec<f64>, objective: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let s = sample(config, gains)?;
    let oracle = Oracle { objective: objective_or(&config.inner, objective)?, budget: config.inner.eval.oracle_budget as u128 };
    let label = oracle.solve(0, &s, &config.inner.system).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("channel_idx", label.optimal.channel_idx)?;
    d.set_item("power_idx", label.optimal.power_idx)?;
    d.set_item("feasible", label.feasible)?;
    d.set_item("sum_se", label.optimal_sum_se)?;
    Ok(d)
}

/// A trained model bundle with the statistics it was trained on.
#[pyclass(name = "Model")]
struct PyModel {
    model: CoreModel,
    stats: DatasetStats,
    objective: Objective,
}

#[pymethods]
impl PyModel {
    /// Loads a bundle (a training run directory) for `config`.
    #[staticmethod]
    fn load(path: PathBuf, config: &PyConfig) -> PyResult<Self> {
        let b = load_bundle(&path, &config.inner.system).map_err(py_err)?;
        Ok(PyModel { model: b.model, stats: b.stats, objective: b.manifest.objective })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.model.kind().as_str()
    }

    #[getter]
    fn objective(&self) -> &'static str {
        self.objective.as_str()
    }

    /// Hard decision `(channel_idx, power_idx)` for one realization.
    fn decide(&self, gains: Vec<f64>) -> PyResult<(Vec<usize>, Vec<usize>)> {
        let n = self.model.n_tps();
        let k = gains.len() / ((n + 1) * (n + 1)).max(1);
        let s = ChannelSample::new(n, k, gains).map_err(py_err)?;
        let a = self.model.decide_sample(&s, &self.stats).map_err(py_err)?;
        Ok((a.channel_idx, a.power_idx))
    }
}

fn load_samples(config: &RunConfig, path: &Path) -> PyResult<Vec<ChannelSample>> {
    let data = read_dataset(path).map_err(|e| match e {
        Error::Io(io) => PyFileNotFoundError::new_err(format!("{}: {io}", path.display())),
        other => py_err(other),
    })?;
    if (data.n_tps, data.n_channels) != (config.system.n_tps, config.system.n_channels) {
        return Err(PyValueError::new_err("dataset dimensions do not match the configuration"));
    }
    Ok(data.samples)
}

/// Writes `count` realizations to `path` plus a `.stats` file beside it.
#[pyfunction]
fn gen_data(config: &PyConfig, count: usize, path: PathBuf) -> PyResult<()> {
    let s = &config.inner.system;
    let samples = generate_dataset(s, count);
    write_atomic(&path, &encode_dataset(&samples, s.n_tps, s.n_channels).map_err(py_err)?).map_err(py_err)?;
    let stats = compute_stats(&samples).map_err(py_err)?;
    write_atomic(&path.with_extension("stats"), &encode_stats(&stats)).map_err(py_err)
}

/// Labels a dataset file; returns the feasible fraction.
#[pyfunction]
#[pyo3(signature = (config, data, out, objective = None))]
fn label(config: &PyConfig, data: PathBuf, out: PathBuf, objective: Option<&str>) -> PyResult<f64> {
    let c = &config.inner;
    let samples = load_samples(c, &data)?;
    let oracle = Oracle { objective: objective_or(c, objective)?, budget: c.eval.oracle_budget as u128 };
    let labels = oracle.label_all(&samples, &c.system).map_err(py_err)?;
    write_atomic(&out, &encode_labels(&labels, c.system.n_tps, c.system.n_channels).map_err(py_err)?).map_err(py_err)?;
    Ok(labels.iter().filter(|l| l.feasible).count() as f64 / labels.len().max(1) as f64)
}

/// Trains per `config.train` and writes a run directory; returns the loss
/// history as `(epoch, phase, total)` tuples.
#[pyfunction]
#[pyo3(signature = (config, data, out_dir, labels = None))]
fn train(config: &PyConfig, data: PathBuf, out_dir: PathBuf, labels: Option<PathBuf>) -> PyResult<Vec<(usize, String, f64)>> {
    let c = &config.inner;
    let samples = load_samples(c, &data)?;
    let stats_path = data.with_extension("stats");
    let stats = if stats_path.exists() { read_stats(&stats_path) } else { compute_stats(&samples) }.map_err(py_err)?;
    let labels = match labels {
        Some(p) => {
            let bytes = std::fs::read(&p).map_err(|e| PyFileNotFoundError::new_err(format!("{}: {e}", p.display())))?;
            let (_, _, records) = decode_labels(&bytes).map_err(py_err)?;
            Some(attach_labels(records, &samples, &c.system).map_err(py_err)?)
        }
        None => None,
    };
    let model = init_model(&c.train, &c.system).map_err(py_err)?;
    let outcome = run_training(&samples, &stats, labels.as_deref(), model, &c.system, &c.train).map_err(py_err)?;
    let stats_bytes = encode_stats(&stats);
    let manifest = Manifest::new(&outcome.model, c.train.objective, &c.system, c.train.seed, &stats_bytes);
    save_run(&out_dir, &c.to_text(), &outcome, &manifest, &stats_bytes).map_err(py_err)?;
    Ok(outcome.history.iter().map(|r| (r.epoch, r.phase.as_str().to_string(), r.terms.total)).collect())
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", r.scheme.as_str())?;
    d.set_item("objective", r.objective.as_str())?;
    d.set_item("n_samples", r.n_samples)?;
    d.set_item("avg_sum_se", r.avg_sum_se)?;
    d.set_item("avg_sum_ee", r.avg_sum_ee)?;
    d.set_item("qos_violation_prob", r.qos_violation_prob)?;
    d.set_item("qos_violation_level", r.qos_violation_level)?;
    d.set_item("median_time_s", r.timing.median_s)?;
    Ok(d)
}

/// Evaluates `schemes` on a dataset file, writes the metric tables to
/// `out_dir` and returns one summary dict per scheme.
#[pyfunction]
#[pyo3(signature = (config, data, out_dir, schemes, centralized = None, distributed = None))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    data: PathBuf,
    out_dir: PathBuf,
    schemes: Vec<String>,
    centralized: Option<PathBuf>,
    distributed: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = &config.inner;
    let samples = load_samples(c, &data)?;
    let load = |p: Option<PathBuf>| p.map(|d| load_bundle(&d, &c.system)).transpose().map_err(py_err);
    let (cb, db) = (load(centralized)?, load(distributed)?);
    let ctx = EvalContext {
        config: &c.system,
        objective: c.train.objective,
        centralized: cb.as_ref(),
        distributed: db.as_ref(),
        oracle_budget: c.eval.oracle_budget as u128,
    };
    let mut reports = Vec::new();
    for s in &schemes {
        reports.push(evaluate_scheme(s.parse().map_err(py_err)?, &samples, &ctx).map_err(py_err)?);
    }
    write_reports(&out_dir, &reports).map_err(py_err)?;
    reports.iter().map(|r| report_dict(py, r)).collect()
}

#[pymodule]
#[pyo3(name = "d2dra")]
fn d2dra_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_count, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(label, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("BudgetExceeded", m.py().get_type::<BudgetExceeded>())?;
    m.add("D2draError", m.py().get_type::<D2draError>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_python_exceptions() {
        Python::initialize();
        Python::attach(|py| {
            assert!(py_err(Error::InvalidConfig("x".into())).is_instance_of::<PyValueError>(py));
            assert!(py_err(Error::MissingDependency("x".into())).is_instance_of::<PyFileNotFoundError>(py));
            assert!(py_err(Error::BudgetExceeded { count: 10, cap: 1 }).is_instance_of::<BudgetExceeded>(py));
            assert!(py_err(Error::Format("x".into())).is_instance_of::<D2draError>(py));
        });
    }

    #[test]
    fn config_overrides_and_counts() {
        let c = PyConfig::new("", vec!["system.n_tps=3".into(), "system.n_channels=3".into()]).unwrap();
        assert_eq!(enumerate_count(&c), 10648);
        assert_eq!(c.gains_len(), 48);
        assert!(PyConfig::new("[train]\nnope = 1\n", Vec::new()).is_err());
        assert!(c.with_overrides(vec!["system.n_power_levels=1".into()]).is_err());
    }
}
