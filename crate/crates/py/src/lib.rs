//! Python bindings: the main types and operations of the noisy gamma
//! degradation library, exposed as the `noisygp_py` extension module.
//!
//! Build with `cargo build -p noisygp-py --release`, then rename or link
//! `libnoisygp_py.so` to `noisygp_py.so` somewhere on `sys.path` (the
//! `python/smoke_test.py` script in the repository does this for you).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use noisygp::dataio;
use noisygp::evaluate as ev;
use noisygp::model::{presets, ModelSpec};
use noisygp::process::{self, Dataset, TimeGrid};
use noisygp::rng::RngState;
use noisygp::sampler::{self, Draws, SamplerConfig};
use noisygp::special;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// A degradation dataset: J units of noisy observations.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads `unit_id,time,y[,z_true]` CSV; a `dataset.json` sidecar next
    /// to it provides the failure threshold when present.
    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: dataio::load_dataset(&path).map_err(io_err)? })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let text = dataio::dataset_to_csv_string(&self.inner).map_err(value_err)?;
        std::fs::write(path, text).map_err(io_err)
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.inner.threshold
    }

    /// Observation times of unit `j` (0-based), excluding t0 = 0.
    fn times(&self, j: usize) -> PyResult<Vec<f64>> {
        self.unit(j).map(|u| u.grid.obs_times().to_vec())
    }

    fn y(&self, j: usize) -> PyResult<Vec<f64>> {
        self.unit(j).map(|u| u.y.clone())
    }

    fn z_true(&self, j: usize) -> PyResult<Option<Vec<f64>>> {
        self.unit(j).map(|u| u.z_true.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_units={}, n_obs={}, threshold={:?})",
            self.inner.n_units(),
            self.inner.n_obs_total(),
            self.inner.threshold
        )
    }
}

impl PyDataset {
    fn unit(&self, j: usize) -> PyResult<&noisygp::process::UnitSeries> {
        self.inner
            .units
            .get(j)
            .ok_or_else(|| value_err(format!("no unit {j}")))
    }
}

/// A pooling structure plus priors; parses the TOML/JSON config format.
#[pyclass(name = "ModelSpec", skip_from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ModelSpec::from_toml_str(text).map_err(value_err)? })
    }

    /// Built-in parameter models: "single_unit", "no_pooling",
    /// "complete_pooling", "varying_mu", "varying_nu", "varying_both".
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let inner = match name {
            "single_unit" => presets::single_unit(),
            "no_pooling" => presets::no_pooling(),
            "complete_pooling" => presets::complete_pooling(),
            "varying_mu" => presets::varying_mu(),
            "varying_nu" => presets::varying_nu(),
            "varying_both" => presets::varying_both(),
            other => return Err(value_err(format!("unknown preset '{other}'"))),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn pooling(&self) -> String {
        self.inner.pooling.to_string()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec(pooling={})", self.inner.pooling)
    }
}

/// Posterior draws with sampler metadata.
#[pyclass(name = "Draws")]
struct PyDraws {
    inner: Draws,
}

#[pymethods]
impl PyDraws {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn n_chains(&self) -> usize {
        self.inner.n_chains
    }

    #[getter]
    fn n_per_chain(&self) -> usize {
        self.inner.n_per_chain
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.column(name).map_err(value_err)
    }

    fn divergence_count(&self) -> usize {
        self.inner.divergence_count()
    }

    /// Summary table (reported parameters only).
    fn summary(&self) -> PyResult<String> {
        let report = sampler::diagnostics(&self.inner).map_err(value_err)?;
        Ok(sampler::summary_table(&report, false))
    }

    /// Full diagnostics report as a JSON string.
    fn diagnostics_json(&self) -> PyResult<String> {
        let report = sampler::diagnostics(&self.inner).map_err(value_err)?;
        serde_json::to_string_pretty(&report).map_err(value_err)
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(io_err)?;
        dataio::write_draws_csv(file, &self.inner).map_err(io_err)
    }

    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(io_err)?;
        Ok(Self { inner: dataio::read_draws_csv(file).map_err(io_err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Draws(n_chains={}, n_per_chain={}, dim={}, divergences={})",
            self.inner.n_chains,
            self.inner.n_per_chain,
            self.inner.dim(),
            self.inner.divergence_count()
        )
    }
}

/// Simulates a dataset from a generator config (TOML text).
#[pyfunction]
fn simulate_study(config_toml: &str, seed: u64) -> PyResult<PyDataset> {
    let config =
        noisygp::process::SimulateConfig::from_toml_str(config_toml).map_err(value_err)?;
    let dataset =
        process::simulate_study(&config, &RngState::from_seed(seed)).map_err(value_err)?;
    Ok(PyDataset { inner: dataset })
}

/// Prior predictive latent paths on the grid `0, times...`; one list per
/// draw, each starting at z = 0.
#[pyfunction]
#[pyo3(signature = (model, times, n_draws=100, seed=0, include_noise=false))]
fn prior_predictive(
    model: &PyModelSpec,
    times: Vec<f64>,
    n_draws: usize,
    seed: u64,
    include_noise: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let mut full = vec![0.0];
    full.extend(times);
    let grid = TimeGrid::new(full).map_err(value_err)?;
    process::prior_predictive(
        &model.inner,
        n_draws,
        &grid,
        &RngState::from_seed(seed),
        include_noise,
    )
    .map_err(value_err)
}

fn build_config(
    chains: usize,
    warmup: usize,
    samples: usize,
    target_accept: f64,
    max_tree_depth: usize,
    seed: u64,
) -> SamplerConfig {
    SamplerConfig {
        n_chains: chains,
        n_warmup: warmup,
        n_samples: samples,
        target_accept,
        max_tree_depth,
        seed,
        step_size_scale: 1.0,
    }
}

/// Fits a model and returns posterior draws.
#[pyfunction]
#[pyo3(signature = (model, dataset, chains=4, warmup=1000, samples=1000,
                    target_accept=0.8, max_tree_depth=10, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    model: &PyModelSpec,
    dataset: &PyDataset,
    chains: usize,
    warmup: usize,
    samples: usize,
    target_accept: f64,
    max_tree_depth: usize,
    seed: u64,
) -> PyResult<PyDraws> {
    let config = build_config(chains, warmup, samples, target_accept, max_tree_depth, seed);
    let draws = sampler::run(&model.inner, &dataset.inner, &config).map_err(value_err)?;
    Ok(PyDraws { inner: draws })
}

/// Cross-validated elppd. `method` is "louo" or "sa". Returns
/// `(total_or_None, per_fold_contributions)`.
#[pyfunction]
#[pyo3(signature = (model, dataset, method, chains=4, warmup=500, samples=500,
                    target_accept=0.8, seed=0))]
#[allow(clippy::too_many_arguments)]
fn elppd(
    model: &PyModelSpec,
    dataset: &PyDataset,
    method: &str,
    chains: usize,
    warmup: usize,
    samples: usize,
    target_accept: f64,
    seed: u64,
) -> PyResult<(Option<f64>, Vec<Option<f64>>)> {
    let config = build_config(chains, warmup, samples, target_accept, 10, seed);
    let rng = RngState::from_seed(seed);
    let result = match method {
        "louo" => ev::elppd_louo(&model.inner, &dataset.inner, &config, &rng),
        "sa" => ev::elppd_sa(&model.inner, &dataset.inner, &config, &rng),
        other => return Err(value_err(format!("method must be louo or sa, got '{other}'"))),
    }
    .map_err(value_err)?;
    Ok((
        result.total,
        result.folds.iter().map(|f| f.contribution).collect(),
    ))
}

fn curve_to_py(curve: ev::FailureCurve) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    (curve.times, curve.levels, curve.quantiles)
}

/// Failure-time distribution for a new unit on an automatic lattice.
/// Returns `(times, levels, quantiles[level][time])`.
#[pyfunction]
#[pyo3(signature = (draws, model, zf, points=200, seed=0))]
fn failure_curve_new_unit(
    draws: &PyDraws,
    model: &PyModelSpec,
    zf: f64,
    points: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let mode = match model.inner.pooling {
        noisygp::model::Pooling::CompletePooling => ev::FailureMode::NewUnitCompletePooling,
        noisygp::model::Pooling::VaryingMu => ev::FailureMode::NewUnitVaryingMu,
        other => {
            return Err(value_err(format!(
                "new-unit curves need complete_pooling or varying_mu, got {other}"
            )))
        }
    };
    let rng = RngState::from_seed(seed);
    let times = ev::default_lattice(&draws.inner, &model.inner, None, zf, mode, points, &rng)
        .map_err(value_err)?;
    let curve = ev::failure_curve(&draws.inner, &model.inner, zf, &times, mode, &rng)
        .map_err(value_err)?;
    Ok(curve_to_py(curve))
}

/// Predictive failure-time distribution for in-test unit `unit` (0-based).
#[pyfunction]
#[pyo3(signature = (draws, model, dataset, unit, zf, points=200, seed=0))]
fn failure_curve_in_test(
    draws: &PyDraws,
    model: &PyModelSpec,
    dataset: &PyDataset,
    unit: usize,
    zf: f64,
    points: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let mode = ev::FailureMode::InTestUnit { unit };
    let rng = RngState::from_seed(seed);
    let times = ev::default_lattice(
        &draws.inner,
        &model.inner,
        Some(&dataset.inner),
        zf,
        mode,
        points,
        &rng,
    )
    .map_err(value_err)?;
    let curve =
        ev::predictive_failure_curve(&draws.inner, &model.inner, &dataset.inner, unit, zf, &times)
            .map_err(value_err)?;
    Ok(curve_to_py(curve))
}

/// Filtered-path quantiles per unit. Returns a list of
/// `(times, levels, quantiles[level][time])` tuples.
#[pyfunction]
fn filtered_paths(
    draws: &PyDraws,
    dataset: &PyDataset,
) -> PyResult<Vec<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)>> {
    let summary = ev::filtered_paths(&draws.inner, &dataset.inner).map_err(value_err)?;
    Ok(summary
        .units
        .into_iter()
        .map(|b| (b.times, b.levels, b.quantiles))
        .collect())
}

#[pyfunction]
fn ln_gamma(x: f64) -> PyResult<f64> {
    special::ln_gamma(x).map_err(value_err)
}

#[pyfunction]
fn gamma_cdf(x: f64, shape: f64, rate: f64) -> PyResult<f64> {
    special::gamma_cdf(x, shape, rate).map_err(value_err)
}

#[pymodule]
fn noisygp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyDraws>()?;
    m.add_function(wrap_pyfunction!(simulate_study, m)?)?;
    m.add_function(wrap_pyfunction!(prior_predictive, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(elppd, m)?)?;
    m.add_function(wrap_pyfunction!(failure_curve_new_unit, m)?)?;
    m.add_function(wrap_pyfunction!(failure_curve_in_test, m)?)?;
    m.add_function(wrap_pyfunction!(filtered_paths, m)?)?;
    m.add_function(wrap_pyfunction!(ln_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_cdf, m)?)?;
    Ok(())
}
