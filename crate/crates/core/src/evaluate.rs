//! Posterior evaluation: filtered-path summaries, cross-validated model
//! comparison via the expected log pointwise predictive density, and
//! posterior failure-time distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::DistSpec;
use crate::error::{Error, Result};
use crate::model::{unit_param_name, ModelSpec, ParamRole, Pooling};
use crate::process::{Dataset, GpParams};
use crate::rng::{derive_seed, RngState};
use crate::sampler::{quantile, run, Draws, SamplerConfig};
use crate::special::{gamma_cdf, norm_logpdf, sample_gamma};

/// Default quantile levels: median plus 50/80/95% bands.
pub const DEFAULT_QUANTILE_LEVELS: [f64; 7] = [0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975];

/// Quantile curves over a time axis; `quantiles[l][t]` is the level-`l`
/// quantile at time index `t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathBand {
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<Vec<f64>>,
}

/// Per-unit posterior bands of the filtered (latent) degradation path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilteredPathSummary {
    pub units: Vec<PathBand>,
}

/// Latent path draws for one unit: cumulative sums of its jump columns.
pub fn latent_path_draws(draws: &Draws, unit: usize, n_obs: usize) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<usize> = (1..=n_obs)
        .map(|i| {
            let name = format!("dz[{},{}]", unit + 1, i);
            draws
                .column_index(&name)
                .ok_or_else(|| Error::Structure(format!("draws lack latent column '{name}'")))
        })
        .collect::<Result<_>>()?;
    let mut paths = Vec::with_capacity(draws.n_rows());
    for r in 0..draws.n_rows() {
        let row = draws.row(r);
        let mut z = Vec::with_capacity(n_obs);
        let mut level = 0.0;
        for &c in &cols {
            level += row[c];
            z.push(level);
        }
        paths.push(z);
    }
    Ok(paths)
}

/// Posterior quantile bands of the filtered degradation path per unit.
pub fn filtered_paths(draws: &Draws, dataset: &Dataset) -> Result<FilteredPathSummary> {
    let levels = DEFAULT_QUANTILE_LEVELS.to_vec();
    let mut units = Vec::with_capacity(dataset.n_units());
    for (j, unit) in dataset.units.iter().enumerate() {
        let paths = latent_path_draws(draws, j, unit.n_obs())?;
        let mut quantiles = vec![Vec::with_capacity(unit.n_obs()); levels.len()];
        for i in 0..unit.n_obs() {
            let mut column: Vec<f64> = paths.iter().map(|p| p[i]).collect();
            column.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (l, &level) in levels.iter().enumerate() {
                quantiles[l].push(quantile(&column, level));
            }
        }
        units.push(PathBand {
            times: unit.grid.obs_times().to_vec(),
            levels: levels.clone(),
            quantiles,
        });
    }
    Ok(FilteredPathSummary { units })
}

/// Cross-validation flavour: leave one unit out, or step ahead (withhold
/// each unit's final observation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMethod {
    Louo,
    Sa,
}

impl std::fmt::Display for CvMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CvMethod::Louo => "louo",
            CvMethod::Sa => "sa",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldOutcome {
    /// Index of the withheld unit.
    pub fold: usize,
    pub contribution: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElppdResult {
    pub method: CvMethod,
    /// Sum over folds; `None` when any fold failed.
    pub total: Option<f64>,
    pub folds: Vec<FoldOutcome>,
    pub n_refits: usize,
    /// Posterior draws per refit used in the predictive averages.
    pub n_draws: usize,
}

/// Content hash of a unit's data; keys fold seeds and fold-internal unit
/// ordering so cross-validation totals do not depend on unit ordering.
fn unit_fingerprint(dataset: &Dataset, j: usize) -> u64 {
    let unit = &dataset.units[j];
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: f64| {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for &t in unit.grid.times() {
        eat(t);
    }
    for &y in &unit.y {
        eat(y);
    }
    h
}

/// Reorders units by content hash (the optional target unit first among
/// equals) so a fold's refit sees the same dataset bytes no matter how
/// the caller ordered the units. Returns the target's new index.
fn canonical_fold_data(dataset: &Dataset, target: Option<usize>) -> (Dataset, usize) {
    let mut order: Vec<usize> = (0..dataset.n_units()).collect();
    order.sort_by_key(|&j| (unit_fingerprint(dataset, j), Some(j) != target));
    let units = order.iter().map(|&j| dataset.units[j].clone()).collect();
    let mapped = target
        .map(|t| order.iter().position(|&j| j == t).unwrap())
        .unwrap_or(0);
    (
        Dataset { units, threshold: dataset.threshold },
        mapped,
    )
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (sum / values.len() as f64).ln()
}

/// Per-draw `(mu, nu)` for a brand-new unit: pooled draws where pooled,
/// hierarchical-prior draws where varying.
fn new_unit_params(
    spec: &ModelSpec,
    cols: &FitColumns,
    row: usize,
    rng: &mut RngState,
) -> (f64, f64) {
    let mu = match spec.pooling {
        Pooling::CompletePooling | Pooling::VaryingNu => cols.mu_global.as_ref().unwrap()[row],
        Pooling::VaryingMu | Pooling::VaryingBoth => DistSpec::TruncNormalLb0 {
            location: cols.mu_mu.as_ref().unwrap()[row],
            scale: cols.sigma_mu.as_ref().unwrap()[row].max(1e-12),
        }
        .sample(rng),
        Pooling::NoPooling => unreachable!("checked by caller"),
    };
    let nu = match spec.pooling {
        Pooling::CompletePooling | Pooling::VaryingMu => cols.nu_global.as_ref().unwrap()[row],
        Pooling::VaryingNu | Pooling::VaryingBoth => DistSpec::TruncNormalLb0 {
            location: cols.mu_nu.as_ref().unwrap()[row],
            scale: cols.sigma_nu.as_ref().unwrap()[row].max(1e-12),
        }
        .sample(rng),
        Pooling::NoPooling => unreachable!("checked by caller"),
    };
    (mu.max(1e-12), nu.max(1e-12))
}

/// Cached parameter columns of a fit.
struct FitColumns {
    mu_global: Option<Vec<f64>>,
    nu_global: Option<Vec<f64>>,
    mu_mu: Option<Vec<f64>>,
    sigma_mu: Option<Vec<f64>>,
    mu_nu: Option<Vec<f64>>,
    sigma_nu: Option<Vec<f64>>,
}

impl FitColumns {
    fn from_draws(spec: &ModelSpec, draws: &Draws) -> Result<Self> {
        let grab = |role: ParamRole| -> Result<Option<Vec<f64>>> {
            if crate::model::required_roles(spec.pooling).contains(&role) {
                Ok(Some(draws.column(role.name())?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            mu_global: match spec.pooling {
                Pooling::CompletePooling | Pooling::VaryingNu => Some(draws.column("mu")?),
                _ => None,
            },
            nu_global: match spec.pooling {
                Pooling::CompletePooling | Pooling::VaryingMu => Some(draws.column("nu")?),
                _ => None,
            },
            mu_mu: grab(ParamRole::MuMu)?,
            sigma_mu: grab(ParamRole::SigmaMu)?,
            mu_nu: grab(ParamRole::MuNu)?,
            sigma_nu: grab(ParamRole::SigmaNu)?,
        })
    }
}

/// Leave-one-unit-out elppd: J refits, each scoring the withheld unit's
/// full series against predictive paths for a new unit.
///
/// Folds are embarrassingly parallel; each fold's refit and predictive
/// stream are seeded by the withheld unit's content, so the total is
/// invariant to unit reordering.
pub fn elppd_louo(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    rng: &RngState,
) -> Result<ElppdResult> {
    if dataset.n_units() < 2 {
        return Err(Error::InvalidConfig(
            "leave-one-unit-out needs at least 2 units".into(),
        ));
    }
    if spec.pooling == Pooling::NoPooling {
        return Err(Error::InvalidConfig(
            "no-pooling models cannot predict a new unit; leave-one-unit-out is undefined".into(),
        ));
    }
    spec.validate()?;

    let folds: Vec<FoldOutcome> = (0..dataset.n_units())
        .into_par_iter()
        .map(|j| louo_fold(spec, dataset, config, rng, j))
        .collect();

    Ok(assemble(CvMethod::Louo, folds, config))
}

/// Refit for a leave-one-unit-out fold: the dataset without unit `j`,
/// canonically ordered, seeded by the withheld unit's content.
fn louo_fit(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    j: usize,
) -> Result<Draws> {
    let fingerprint = unit_fingerprint(dataset, j);
    let (reduced, _) = canonical_fold_data(&dataset.without_unit(j)?, None);
    let fold_config = SamplerConfig {
        seed: derive_seed(config.seed, fingerprint),
        ..config.clone()
    };
    run(spec, &reduced, &fold_config)
}

/// Scores the withheld unit against predictive new-unit paths drawn from
/// a fold refit.
fn louo_score(
    spec: &ModelSpec,
    dataset: &Dataset,
    draws: &Draws,
    j: usize,
    rng: &RngState,
) -> Result<f64> {
    let cols = FitColumns::from_draws(spec, draws)?;
    let sigma = draws.column("sigma")?;
    let mut fold_rng = rng.split(unit_fingerprint(dataset, j));

    let unit = &dataset.units[j];
    let dts = unit.grid.increments();
    let n_rows = draws.n_rows();
    // log N(y_i | z~_i^s, sigma^s) per observation, per draw.
    let mut per_obs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_rows); unit.n_obs()];
    for s in 0..n_rows {
        let (mu, nu) = new_unit_params(spec, &cols, s, &mut fold_rng);
        let gp = GpParams { mu, nu };
        let mut level = 0.0;
        for (i, &dt) in dts.iter().enumerate() {
            let (shape, rate) = gp.jump_shape_rate(dt);
            level += sample_gamma(shape, rate, &mut fold_rng);
            per_obs[i].push(norm_logpdf(unit.y[i], level, sigma[s]));
        }
    }
    Ok(per_obs.iter().map(|v| log_mean_exp(v)).sum())
}

fn louo_fold(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    rng: &RngState,
    j: usize,
) -> FoldOutcome {
    let run_fold = || -> Result<f64> {
        let draws = louo_fit(spec, dataset, config, j)?;
        louo_score(spec, dataset, &draws, j, rng)
    };
    match run_fold() {
        Ok(c) => FoldOutcome { fold: j, contribution: Some(c), error: None },
        Err(e) => FoldOutcome { fold: j, contribution: None, error: Some(e.to_string()) },
    }
}

/// Step-ahead elppd: J refits, fold `j` withholding only unit `j`'s final
/// observation and scoring it one jump ahead of the unit's filtered path.
pub fn elppd_sa(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    rng: &RngState,
) -> Result<ElppdResult> {
    elppd_sa_impl(spec, dataset, config, rng, true)
}

/// In-sample variant of the step-ahead score: identical machinery but the
/// "withheld" point stays in the refit. Links the CV estimate to the
/// plug-in log pointwise predictive density.
pub fn elppd_sa_insample(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    rng: &RngState,
) -> Result<ElppdResult> {
    elppd_sa_impl(spec, dataset, config, rng, false)
}

fn elppd_sa_impl(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    rng: &RngState,
    withhold: bool,
) -> Result<ElppdResult> {
    for (j, unit) in dataset.units.iter().enumerate() {
        if unit.n_obs() < 2 {
            return Err(Error::InvalidConfig(format!(
                "step-ahead needs at least 2 observations per unit; unit {j} has {}",
                unit.n_obs()
            )));
        }
    }
    spec.validate()?;

    let folds: Vec<FoldOutcome> = (0..dataset.n_units())
        .into_par_iter()
        .map(|j| sa_fold(spec, dataset, config, rng, j, withhold))
        .collect();

    Ok(assemble(CvMethod::Sa, folds, config))
}

/// Refit for a step-ahead fold. Returns the draws and the withheld
/// unit's index within the canonically ordered fit data.
fn sa_fit(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    j: usize,
    withhold: bool,
) -> Result<(Draws, usize)> {
    let fingerprint = unit_fingerprint(dataset, j).wrapping_add(if withhold { 0 } else { 1 });
    let base = if withhold {
        dataset.without_last_obs(j)?
    } else {
        dataset.clone()
    };
    let (fit_data, jj) = canonical_fold_data(&base, Some(j));
    let fold_config = SamplerConfig {
        seed: derive_seed(config.seed, fingerprint),
        ..config.clone()
    };
    Ok((run(spec, &fit_data, &fold_config)?, jj))
}

/// Scores unit `j`'s final observation one predictive jump beyond its
/// filtered path in the fold refit.
fn sa_score(
    spec: &ModelSpec,
    dataset: &Dataset,
    draws: &Draws,
    j: usize,
    jj: usize,
    withhold: bool,
    rng: &RngState,
) -> Result<f64> {
    let fingerprint = unit_fingerprint(dataset, j).wrapping_add(if withhold { 0 } else { 1 });
    let n_units = dataset.n_units();
    let sigma_name = match spec.pooling {
        Pooling::NoPooling => unit_param_name("sigma", jj, n_units),
        _ => "sigma".to_string(),
    };
    let sigma = draws.column(&sigma_name)?;
    let mu_name = match spec.pooling {
        Pooling::CompletePooling | Pooling::VaryingNu => "mu".to_string(),
        _ => unit_param_name("mu", jj, n_units),
    };
    let nu_name = match spec.pooling {
        Pooling::CompletePooling | Pooling::VaryingMu => "nu".to_string(),
        _ => unit_param_name("nu", jj, n_units),
    };
    let mu = draws.column(&mu_name)?;
    let nu = draws.column(&nu_name)?;

    let unit = &dataset.units[j];
    let n_kept = unit.n_obs() - 1;
    let times = unit.grid.times();
    let dt_last = times[unit.n_obs()] - times[n_kept];
    let y_last = unit.y[unit.n_obs() - 1];
    // Filtered level at the second-to-last time, from the fit.
    let paths = latent_path_draws(draws, jj, n_kept)?;
    let mut fold_rng = rng.split(fingerprint);
    let mut log_dens = Vec::with_capacity(draws.n_rows());
    for (s, path) in paths.iter().enumerate() {
        let gp = GpParams { mu: mu[s], nu: nu[s] };
        let (shape, rate) = gp.jump_shape_rate(dt_last);
        let jump = sample_gamma(shape, rate, &mut fold_rng);
        let z_pred = path[n_kept - 1] + jump;
        log_dens.push(norm_logpdf(y_last, z_pred, sigma[s]));
    }
    Ok(log_mean_exp(&log_dens))
}

fn sa_fold(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &SamplerConfig,
    rng: &RngState,
    j: usize,
    withhold: bool,
) -> FoldOutcome {
    let run_fold = || -> Result<f64> {
        let (draws, jj) = sa_fit(spec, dataset, config, j, withhold)?;
        sa_score(spec, dataset, &draws, j, jj, withhold, rng)
    };
    match run_fold() {
        Ok(c) => FoldOutcome { fold: j, contribution: Some(c), error: None },
        Err(e) => FoldOutcome { fold: j, contribution: None, error: Some(e.to_string()) },
    }
}

/// Elppd totals per model for `n_reps` independent predictive-scoring
/// streams over one set of fold refits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankingStudy {
    /// `louo[rep][model]` totals.
    pub louo: Vec<Vec<f64>>,
    /// `sa[rep][model]` totals.
    pub sa: Vec<Vec<f64>>,
}

impl RankingStudy {
    /// How often each model attains the top rank, per method.
    pub fn top_counts(&self) -> (Vec<usize>, Vec<usize>) {
        let count = |table: &Vec<Vec<f64>>| {
            let n_models = table.first().map_or(0, Vec::len);
            let mut wins = vec![0usize; n_models];
            for row in table {
                let top = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                wins[top] += 1;
            }
            wins
        };
        (count(&self.louo), count(&self.sa))
    }
}

/// Model-comparison ranking study: every (model, fold) pair is refit
/// exactly once under both cross-validation schemes, then the elppd
/// totals are recomputed under `n_reps` fresh predictive-scoring streams
/// (`rng.split(rep)` each). Ranking stability across replications is the
/// Monte Carlo robustness of the comparison, at the cost of one
/// models-by-folds batch of refits.
pub fn elppd_ranking_study(
    specs: &[ModelSpec],
    dataset: &Dataset,
    config: &SamplerConfig,
    n_reps: usize,
    rng: &RngState,
) -> Result<RankingStudy> {
    let n_units = dataset.n_units();
    let mut louo = vec![vec![0.0; specs.len()]; n_reps];
    let mut sa = vec![vec![0.0; specs.len()]; n_reps];
    for (m, spec) in specs.iter().enumerate() {
        if spec.pooling == Pooling::NoPooling {
            return Err(Error::InvalidConfig(
                "ranking studies compare pooled models".into(),
            ));
        }
        for j in 0..n_units {
            let louo_draws = louo_fit(spec, dataset, config, j)?;
            let (sa_draws, jj) = sa_fit(spec, dataset, config, j, true)?;
            for rep in 0..n_reps {
                let rep_rng = rng.split(rep as u64);
                louo[rep][m] += louo_score(spec, dataset, &louo_draws, j, &rep_rng)?;
                sa[rep][m] += sa_score(spec, dataset, &sa_draws, j, jj, true, &rep_rng)?;
            }
        }
    }
    Ok(RankingStudy { louo, sa })
}

fn assemble(method: CvMethod, folds: Vec<FoldOutcome>, config: &SamplerConfig) -> ElppdResult {
    let total = folds
        .iter()
        .map(|f| f.contribution)
        .try_fold(0.0, |acc, c| c.map(|c| acc + c));
    ElppdResult {
        method,
        total,
        n_refits: folds.len(),
        folds,
        n_draws: config.n_chains * config.n_samples,
    }
}

/// Which failure-time distribution to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureMode {
    /// New unit under the complete-pooling model.
    NewUnitCompletePooling,
    /// New unit under the varying-mu model: mu drawn from its estimated
    /// population distribution per posterior draw.
    NewUnitVaryingMu,
    /// A unit under test, conditioned on its filtered degradation level
    /// at its last observation time (0-based index).
    InTestUnit { unit: usize },
}

/// Posterior bands of the failure-time distribution F_T on a time lattice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailureCurve {
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    /// `quantiles[l][t]`: level-`l` posterior quantile of F_T(times[t]).
    pub quantiles: Vec<Vec<f64>>,
    pub threshold: f64,
    pub mode: FailureMode,
}

impl FailureCurve {
    /// Mean width of the central band at the given pair of levels.
    pub fn mean_band_width(&self, lo: f64, hi: f64) -> Option<f64> {
        let li = self.levels.iter().position(|&l| l == lo)?;
        let hi_ix = self.levels.iter().position(|&l| l == hi)?;
        let n = self.times.len() as f64;
        Some(
            self.quantiles[hi_ix]
                .iter()
                .zip(&self.quantiles[li])
                .map(|(h, l)| h - l)
                .sum::<f64>()
                / n,
        )
    }
}

/// Tail probability of the gamma process level: P(Z_t > z_f | mu, nu)
/// with Z_t ~ Ga(t / nu^2, 1 / (mu nu^2)); zero at t = 0 by the
/// vanishing-shape convention.
fn crossing_probability(t: f64, gp: &GpParams, threshold: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let (shape, rate) = gp.jump_shape_rate(t);
    Ok(1.0 - gamma_cdf(threshold, shape, rate)?)
}

/// One F_T(t) curve per posterior draw for a new unit.
pub fn failure_curve_draws(
    draws: &Draws,
    spec: &ModelSpec,
    threshold: f64,
    times: &[f64],
    mode: FailureMode,
    rng: &RngState,
) -> Result<Vec<Vec<f64>>> {
    check_new_unit_mode(spec, mode)?;
    let cols = FitColumns::from_draws(spec, draws)?;
    let mut mode_rng = rng.split(0x46_54);
    (0..draws.n_rows())
        .map(|s| {
            let (mu, nu) = new_unit_params(spec, &cols, s, &mut mode_rng);
            let gp = GpParams { mu, nu };
            times
                .iter()
                .map(|&t| crossing_probability(t, &gp, threshold))
                .collect()
        })
        .collect()
}

fn check_new_unit_mode(spec: &ModelSpec, mode: FailureMode) -> Result<()> {
    let ok = match mode {
        FailureMode::NewUnitCompletePooling => spec.pooling == Pooling::CompletePooling,
        FailureMode::NewUnitVaryingMu => spec.pooling == Pooling::VaryingMu,
        FailureMode::InTestUnit { .. } => {
            return Err(Error::InvalidConfig(
                "in-test curves go through predictive_failure_curve".into(),
            ))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "failure mode {mode:?} does not match pooling {}",
            spec.pooling
        )))
    }
}

/// Posterior failure-time distribution for a new unit.
pub fn failure_curve(
    draws: &Draws,
    spec: &ModelSpec,
    threshold: f64,
    times: &[f64],
    mode: FailureMode,
    rng: &RngState,
) -> Result<FailureCurve> {
    validate_lattice(times)?;
    let matrix = failure_curve_draws(draws, spec, threshold, times, mode, rng)?;
    Ok(curve_from_matrix(matrix, times, threshold, mode))
}

/// Per-draw F_T(t) curves for a unit under test, conditioned on its
/// filtered level at its last observation time. Draws whose filtered
/// level already exceeds the threshold contribute F = 1 beyond t_I.
pub fn predictive_failure_curve_draws(
    draws: &Draws,
    spec: &ModelSpec,
    dataset: &Dataset,
    unit: usize,
    threshold: f64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if unit >= dataset.n_units() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} units, no unit index {unit}",
            dataset.n_units()
        )));
    }
    let n_units = dataset.n_units();
    let series = &dataset.units[unit];
    let t_last = *series.grid.times().last().unwrap();
    let mu_name = match spec.pooling {
        Pooling::CompletePooling | Pooling::VaryingNu => "mu".to_string(),
        _ => unit_param_name("mu", unit, n_units),
    };
    let nu_name = match spec.pooling {
        Pooling::CompletePooling | Pooling::VaryingMu => "nu".to_string(),
        _ => unit_param_name("nu", unit, n_units),
    };
    let mu = draws.column(&mu_name)?;
    let nu = draws.column(&nu_name)?;
    let paths = latent_path_draws(draws, unit, series.n_obs())?;

    (0..draws.n_rows())
        .map(|s| {
            let z_last = paths[s][series.n_obs() - 1];
            let gp = GpParams { mu: mu[s], nu: nu[s] };
            times
                .iter()
                .map(|&t| {
                    if t <= t_last {
                        Ok(0.0)
                    } else if z_last >= threshold {
                        Ok(1.0)
                    } else {
                        crossing_probability(t - t_last, &gp, threshold - z_last)
                    }
                })
                .collect()
        })
        .collect()
}

/// Posterior predictive failure-time distribution for an in-test unit.
pub fn predictive_failure_curve(
    draws: &Draws,
    spec: &ModelSpec,
    dataset: &Dataset,
    unit: usize,
    threshold: f64,
    times: &[f64],
) -> Result<FailureCurve> {
    validate_lattice(times)?;
    let matrix = predictive_failure_curve_draws(draws, spec, dataset, unit, threshold, times)?;
    Ok(curve_from_matrix(
        matrix,
        times,
        threshold,
        FailureMode::InTestUnit { unit },
    ))
}

fn validate_lattice(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidConfig("empty time lattice".into()));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "time lattice must be strictly increasing".into(),
            ));
        }
    }
    if times[0] < 0.0 {
        return Err(Error::InvalidConfig("lattice times must be >= 0".into()));
    }
    Ok(())
}

fn curve_from_matrix(
    matrix: Vec<Vec<f64>>,
    times: &[f64],
    threshold: f64,
    mode: FailureMode,
) -> FailureCurve {
    let levels = DEFAULT_QUANTILE_LEVELS.to_vec();
    let mut quantiles = vec![Vec::with_capacity(times.len()); levels.len()];
    for t in 0..times.len() {
        let mut column: Vec<f64> = matrix.iter().map(|row| row[t]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (l, &level) in levels.iter().enumerate() {
            quantiles[l].push(quantile(&column, level));
        }
    }
    FailureCurve {
        times: times.to_vec(),
        levels,
        quantiles,
        threshold,
        mode,
    }
}

/// Default lattice: `n` points from 0 to 1.5x the posterior-median
/// crossing time (for in-test units, measured from the unit's last
/// observation time).
pub fn default_lattice(
    draws: &Draws,
    spec: &ModelSpec,
    dataset: Option<&Dataset>,
    threshold: f64,
    mode: FailureMode,
    n: usize,
    rng: &RngState,
) -> Result<Vec<f64>> {
    let n = n.max(2);
    let mut mode_rng = rng.split(0x6c_61);
    let (offset, mut crossings): (f64, Vec<f64>) = match mode {
        FailureMode::InTestUnit { unit } => {
            let dataset = dataset.ok_or_else(|| {
                Error::InvalidConfig("in-test lattice needs the fitted dataset".into())
            })?;
            let series = &dataset.units[unit];
            let t_last = *series.grid.times().last().unwrap();
            let n_units = dataset.n_units();
            let mu_name = match spec.pooling {
                Pooling::CompletePooling | Pooling::VaryingNu => "mu".to_string(),
                _ => unit_param_name("mu", unit, n_units),
            };
            let mu = draws.column(&mu_name)?;
            let paths = latent_path_draws(draws, unit, series.n_obs())?;
            let crossings = (0..draws.n_rows())
                .map(|s| (threshold - paths[s][series.n_obs() - 1]).max(0.0) / mu[s])
                .collect();
            (t_last, crossings)
        }
        _ => {
            check_new_unit_mode(spec, mode)?;
            let cols = FitColumns::from_draws(spec, draws)?;
            let crossings = (0..draws.n_rows())
                .map(|s| {
                    let (mu, _) = new_unit_params(spec, &cols, s, &mut mode_rng);
                    threshold / mu
                })
                .collect();
            (0.0, crossings)
        }
    };
    crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile(&crossings, 0.5);
    let horizon = offset + (1.5 * median).max(1e-6);
    let step = horizon / (n - 1) as f64;
    Ok((0..n).map(|k| k as f64 * step).collect())
}
