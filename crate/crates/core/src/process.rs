//! Forward simulation of noisy gamma degradation processes.
//!
//! Paths are simulated jump by jump: over an increment `dt` the latent
//! degradation grows by `Ga(dt / nu^2, 1 / (mu nu^2))`, so the path has
//! mean `mu * t` and variance `mu^2 nu^2 t`. Observations add iid Gaussian
//! noise on top of the latent path.

use serde::{Deserialize, Serialize};

use crate::dist::DistSpec;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamRole, Pooling};
use crate::rng::RngState;
use crate::special::{sample_gamma, sample_std_normal};

/// Observation times for one unit; always starts at `t0 = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `times` must start at 0 and be strictly increasing.
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times[0] != 0.0 {
            return Err(Error::InvalidConfig(
                "time grid must start at t0 = 0".into(),
            ));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "time grid must be strictly increasing, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Builds the grid 0, dt_1, dt_1 + dt_2, ...
    pub fn from_increments(increments: &[f64]) -> Result<Self> {
        let mut times = Vec::with_capacity(increments.len() + 1);
        times.push(0.0);
        let mut t = 0.0;
        for &dt in increments {
            t += dt;
            times.push(t);
        }
        Self::new(times)
    }

    /// All times including `t0 = 0`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Observation times `t1..tI`.
    pub fn obs_times(&self) -> &[f64] {
        &self.times[1..]
    }

    /// Increments `dt_i = t_i - t_{i-1}`.
    pub fn increments(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of observations (excludes `t0`).
    pub fn n_obs(&self) -> usize {
        self.times.len() - 1
    }
}

/// Gamma-process parameters: mean degradation rate and coefficient of
/// variation. The shape/rate pair of the increment distribution is
/// recovered as `beta = 1 / nu^2`, `xi = 1 / (mu nu^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub mu: f64,
    pub nu: f64,
}

impl GpParams {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite() && nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma process requires mu > 0 and nu > 0, got ({mu}, {nu})"
            )));
        }
        Ok(Self { mu, nu })
    }

    /// Shape and rate of the jump over an increment `dt`.
    pub fn jump_shape_rate(&self, dt: f64) -> (f64, f64) {
        let nu2 = self.nu * self.nu;
        (dt / nu2, 1.0 / (self.mu * nu2))
    }
}

/// Noisy measurements of one unit, with the generating latent path kept
/// when the data are simulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSeries {
    pub grid: TimeGrid,
    /// One noisy value per observation time; may be non-monotone.
    pub y: Vec<f64>,
    /// Latent path at the observation times, if known.
    pub z_true: Option<Vec<f64>>,
}

impl UnitSeries {
    pub fn new(grid: TimeGrid, y: Vec<f64>, z_true: Option<Vec<f64>>) -> Result<Self> {
        if y.len() != grid.n_obs() {
            return Err(Error::Structure(format!(
                "unit has {} observations for {} observation times",
                y.len(),
                grid.n_obs()
            )));
        }
        if let Some(z) = &z_true {
            if z.len() != y.len() {
                return Err(Error::Structure(
                    "z_true length differs from observation count".into(),
                ));
            }
            for w in z.windows(2) {
                if w[1] < w[0] {
                    return Err(Error::Structure("z_true must be nondecreasing".into()));
                }
            }
        }
        Ok(Self { grid, y, z_true })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

/// A repeated-measures degradation test: J units, possibly ragged grids,
/// and an optional shared soft failure threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub units: Vec<UnitSeries>,
    pub threshold: Option<f64>,
}

impl Dataset {
    pub fn new(units: Vec<UnitSeries>, threshold: Option<f64>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Structure("dataset needs at least one unit".into()));
        }
        if let Some(zf) = threshold {
            if !(zf > 0.0) {
                return Err(Error::Structure(format!(
                    "failure threshold must be positive, got {zf}"
                )));
            }
        }
        Ok(Self { units, threshold })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_obs_total(&self) -> usize {
        self.units.iter().map(UnitSeries::n_obs).sum()
    }

    /// Dataset with unit `j` removed.
    pub fn without_unit(&self, j: usize) -> Result<Dataset> {
        if j >= self.units.len() {
            return Err(Error::Structure(format!("no unit {j}")));
        }
        if self.units.len() == 1 {
            return Err(Error::Structure("cannot drop the only unit".into()));
        }
        let units = self
            .units
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, u)| u.clone())
            .collect();
        Dataset::new(units, self.threshold)
    }

    /// Dataset with the final observation of unit `j` removed.
    pub fn without_last_obs(&self, j: usize) -> Result<Dataset> {
        let unit = self
            .units
            .get(j)
            .ok_or_else(|| Error::Structure(format!("no unit {j}")))?;
        if unit.n_obs() < 2 {
            return Err(Error::Structure(format!(
                "unit {j} needs at least 2 observations to withhold one"
            )));
        }
        let mut units = self.units.clone();
        let keep = unit.n_obs() - 1;
        let times = unit.grid.times()[..=keep].to_vec();
        units[j] = UnitSeries::new(
            TimeGrid::new(times)?,
            unit.y[..keep].to_vec(),
            unit.z_true.as_ref().map(|z| z[..keep].to_vec()),
        )?;
        Dataset::new(units, self.threshold)
    }
}

/// Simulates a latent path on `grid`; returns one value per grid time,
/// starting with `z = 0` at `t0`.
pub fn simulate_path(grid: &TimeGrid, gp: &GpParams, rng: &mut RngState) -> Vec<f64> {
    let mut z = Vec::with_capacity(grid.times().len());
    z.push(0.0);
    let mut level = 0.0;
    for dt in grid.increments() {
        let (shape, rate) = gp.jump_shape_rate(dt);
        level += sample_gamma(shape, rate, rng);
        z.push(level);
    }
    z
}

/// Adds iid N(0, sigma) noise to a latent path.
pub fn add_noise(z: &[f64], sigma: f64, rng: &mut RngState) -> Vec<f64> {
    debug_assert!(sigma > 0.0);
    z.iter()
        .map(|&zi| zi + sigma * sample_std_normal(rng))
        .collect()
}

/// How per-unit observation times are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Fixed observation times (t0 = 0 implied, not listed).
    Times { times: Vec<f64> },
    /// `n` increments drawn uniformly from (lower, upper) per unit.
    UniformIncrements { n: usize, lower: f64, upper: f64 },
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        match self {
            GridSpec::Times { times } => {
                let mut full = vec![0.0];
                full.extend_from_slice(times);
                TimeGrid::new(full).map(|_| ())
            }
            GridSpec::UniformIncrements { n, lower, upper } => {
                if *n == 0 {
                    return Err(Error::InvalidConfig("grid needs n >= 1 increments".into()));
                }
                if !(*lower > 0.0 && upper > lower) {
                    return Err(Error::InvalidConfig(format!(
                        "increment range requires 0 < lower < upper, got ({lower}, {upper})"
                    )));
                }
                Ok(())
            }
        }
    }

    fn draw(&self, rng: &mut RngState) -> Result<TimeGrid> {
        match self {
            GridSpec::Times { times } => {
                let mut full = vec![0.0];
                full.extend_from_slice(times);
                TimeGrid::new(full)
            }
            GridSpec::UniformIncrements { n, lower, upper } => {
                let incs: Vec<f64> = (0..*n).map(|_| rng.uniform_range(*lower, *upper)).collect();
                TimeGrid::from_increments(&incs)
            }
        }
    }
}

/// A process parameter that is either shared or drawn per unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamRecipe {
    Fixed { value: f64 },
    /// Per-unit draw from N+(location, scale).
    TruncNormal { location: f64, scale: f64 },
}

impl ParamRecipe {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            ParamRecipe::Fixed { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} must be a positive finite value, got {value}"
                    )));
                }
                Ok(())
            }
            ParamRecipe::TruncNormal { location, scale } => DistSpec::TruncNormalLb0 {
                location: *location,
                scale: *scale,
            }
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("{name}: {e}"))),
        }
    }

    fn draw(&self, rng: &mut RngState) -> f64 {
        match self {
            ParamRecipe::Fixed { value } => *value,
            ParamRecipe::TruncNormal { location, scale } => DistSpec::TruncNormalLb0 {
                location: *location,
                scale: *scale,
            }
            .sample(rng),
        }
    }
}

/// Full recipe for a simulated study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_units: usize,
    pub grid: GridSpec,
    pub mu: ParamRecipe,
    pub nu: ParamRecipe,
    /// Measurement noise standard deviation.
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl SimulateConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: SimulateConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_units == 0 {
            problems.push("n_units: must be >= 1".to_string());
        }
        if let Err(e) = self.grid.validate() {
            problems.push(format!("grid: {e}"));
        }
        if let Err(e) = self.mu.validate("mu") {
            problems.push(e.to_string());
        }
        if let Err(e) = self.nu.validate("nu") {
            problems.push(e.to_string());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            problems.push(format!("sigma: must be positive, got {}", self.sigma));
        }
        if let Some(zf) = self.threshold {
            if !(zf > 0.0) {
                problems.push(format!("threshold: must be positive, got {zf}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Simulates a full dataset; deterministic given `rng`'s seed and stream.
/// Unit `j` consumes the child stream `rng.split(j)`, so the result does
/// not depend on generation order.
pub fn simulate_study(config: &SimulateConfig, rng: &RngState) -> Result<Dataset> {
    config.validate()?;
    let mut units = Vec::with_capacity(config.n_units);
    for j in 0..config.n_units {
        let mut unit_rng = rng.split(j as u64);
        let grid = config.grid.draw(&mut unit_rng)?;
        let gp = GpParams::new(config.mu.draw(&mut unit_rng), config.nu.draw(&mut unit_rng))?;
        let z_full = simulate_path(&grid, &gp, &mut unit_rng);
        let z_obs = z_full[1..].to_vec();
        let y = add_noise(&z_obs, config.sigma, &mut unit_rng);
        units.push(UnitSeries::new(grid, y, Some(z_obs))?);
    }
    Dataset::new(units, config.threshold)
}

/// One prior predictive draw of `(mu, nu)` for a fresh unit under `spec`.
/// Hierarchical variants first draw hyperparameters from their priors and
/// then the unit-level parameter from the implied N+ layer.
pub fn draw_unit_params_from_prior(spec: &ModelSpec, rng: &mut RngState) -> Result<GpParams> {
    let direct = |role: ParamRole, rng: &mut RngState| -> Result<f64> {
        Ok(spec.prior(role)?.sample(rng))
    };
    let hierarchical =
        |loc_role: ParamRole, scale_role: ParamRole, rng: &mut RngState| -> Result<f64> {
            let location = spec.prior(loc_role)?.sample(rng);
            let scale = spec.prior(scale_role)?.sample(rng).max(1e-12);
            Ok(DistSpec::TruncNormalLb0 { location, scale }.sample(rng))
        };
    let (mu, nu) = match spec.pooling {
        Pooling::NoPooling | Pooling::CompletePooling => {
            (direct(ParamRole::Mu, rng)?, direct(ParamRole::Nu, rng)?)
        }
        Pooling::VaryingMu => (
            hierarchical(ParamRole::MuMu, ParamRole::SigmaMu, rng)?,
            direct(ParamRole::Nu, rng)?,
        ),
        Pooling::VaryingNu => (
            direct(ParamRole::Mu, rng)?,
            hierarchical(ParamRole::MuNu, ParamRole::SigmaNu, rng)?,
        ),
        Pooling::VaryingBoth => (
            hierarchical(ParamRole::MuMu, ParamRole::SigmaMu, rng)?,
            hierarchical(ParamRole::MuNu, ParamRole::SigmaNu, rng)?,
        ),
    };
    GpParams::new(mu.max(1e-12), nu.max(1e-12))
}

/// Prior predictive ensemble of latent paths on `grid`.
///
/// Noise is left out by default: the measurement-error prior is typically
/// vague, and the check targets the process itself. Draw `i` uses the
/// child stream `rng.split(i)`, so ensembles may be generated in any order
/// or in parallel with identical results.
pub fn prior_predictive(
    spec: &ModelSpec,
    n_draws: usize,
    grid: &TimeGrid,
    rng: &RngState,
    include_noise: bool,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    (0..n_draws)
        .map(|i| {
            let mut draw_rng = rng.split(i as u64);
            let gp = draw_unit_params_from_prior(spec, &mut draw_rng)?;
            let mut path = simulate_path(grid, &gp, &mut draw_rng);
            if include_noise {
                let sigma = spec.prior(ParamRole::Sigma)?.sample(&mut draw_rng);
                let noisy = add_noise(&path[1..], sigma.max(1e-12), &mut draw_rng);
                path.truncate(1);
                path.extend(noisy);
            }
            Ok(path)
        })
        .collect()
}

/// Prior predictive ensemble under the legacy shape/rate parameterization
/// `dz_i ~ Ga(beta dt_i, xi)` with independent priors on `beta` and `xi`.
pub fn prior_predictive_shape_rate(
    shape_prior: &DistSpec,
    rate_prior: &DistSpec,
    n_draws: usize,
    grid: &TimeGrid,
    rng: &RngState,
) -> Result<Vec<Vec<f64>>> {
    shape_prior.validate()?;
    rate_prior.validate()?;
    Ok((0..n_draws)
        .map(|i| {
            let mut draw_rng = rng.split(i as u64);
            let beta = shape_prior.sample(&mut draw_rng).max(1e-300);
            let xi = rate_prior.sample(&mut draw_rng).max(1e-300);
            let mut z = Vec::with_capacity(grid.times().len());
            z.push(0.0);
            let mut level = 0.0;
            for dt in grid.increments() {
                level += sample_gamma(beta * dt, xi, &mut draw_rng);
                z.push(level);
            }
            z
        })
        .collect())
}
