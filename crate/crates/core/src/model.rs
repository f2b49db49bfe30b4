//! Joint log-posterior and gradient over an unconstrained parameter vector.
//!
//! The latent degradation jumps are sampled parameters, not marginalized:
//! each observation contributes a Gaussian data term at the cumulative sum
//! of the jumps, each jump contributes a gamma process term, and the
//! parameter model adds the priors. Sampling runs in unconstrained space,
//! so positive parameters are log-transformed and interval parameters go
//! through a scaled logistic, with the log-Jacobian accumulated exactly.
//!
//! Pooling variants share this machinery; they differ only in which
//! parameters are global, which are per-unit, and which hierarchical
//! `N+(location, scale)` layers tie the per-unit ones together.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dist::{DistSpec, Support};
use crate::error::{Error, Result};
use crate::process::Dataset;
use crate::rng::RngState;
use crate::special::{digamma_raw, ln_gamma_raw, norm_cdf, norm_pdf, LN_SQRT_2PI};

/// How information is shared across units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// J separate models; nothing is shared.
    NoPooling,
    /// One process; everything is shared.
    CompletePooling,
    /// Per-unit mean rates from a common estimated N+ distribution.
    VaryingMu,
    /// Per-unit coefficients of variation from a common N+ distribution.
    VaryingNu,
    /// Both parameters vary.
    VaryingBoth,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pooling::NoPooling => "no_pooling",
            Pooling::CompletePooling => "complete_pooling",
            Pooling::VaryingMu => "varying_mu",
            Pooling::VaryingNu => "varying_nu",
            Pooling::VaryingBoth => "varying_both",
        };
        f.write_str(s)
    }
}

/// Roles a prior can play in the parameter model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Mu,
    Nu,
    Sigma,
    MuMu,
    SigmaMu,
    MuNu,
    SigmaNu,
}

impl ParamRole {
    pub fn name(&self) -> &'static str {
        match self {
            ParamRole::Mu => "mu",
            ParamRole::Nu => "nu",
            ParamRole::Sigma => "sigma",
            ParamRole::MuMu => "mu_mu",
            ParamRole::SigmaMu => "sigma_mu",
            ParamRole::MuNu => "mu_nu",
            ParamRole::SigmaNu => "sigma_nu",
        }
    }
}

/// A pooling structure plus the priors it needs; fully determines the
/// posterior once paired with a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub pooling: Pooling,
    pub priors: BTreeMap<ParamRole, DistSpec>,
}

/// Prior roles each pooling variant requires, in vector-layout order.
pub fn required_roles(pooling: Pooling) -> &'static [ParamRole] {
    match pooling {
        Pooling::NoPooling | Pooling::CompletePooling => {
            &[ParamRole::Mu, ParamRole::Nu, ParamRole::Sigma]
        }
        Pooling::VaryingMu => &[
            ParamRole::MuMu,
            ParamRole::SigmaMu,
            ParamRole::Nu,
            ParamRole::Sigma,
        ],
        Pooling::VaryingNu => &[
            ParamRole::Mu,
            ParamRole::MuNu,
            ParamRole::SigmaNu,
            ParamRole::Sigma,
        ],
        Pooling::VaryingBoth => &[
            ParamRole::MuMu,
            ParamRole::SigmaMu,
            ParamRole::MuNu,
            ParamRole::SigmaNu,
            ParamRole::Sigma,
        ],
    }
}

impl ModelSpec {
    pub fn new(pooling: Pooling, priors: BTreeMap<ParamRole, DistSpec>) -> Result<Self> {
        let spec = Self { pooling, priors };
        spec.validate()?;
        Ok(spec)
    }

    /// Priors must be present exactly for the roles the pooling variant
    /// requires, and each must be a proper distribution.
    pub fn validate(&self) -> Result<()> {
        let required = required_roles(self.pooling);
        for role in required {
            match self.priors.get(role) {
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "pooling {} requires a prior for role {}",
                        self.pooling,
                        role.name()
                    )))
                }
                Some(d) => d.validate()?,
            }
        }
        for role in self.priors.keys() {
            if !required.contains(role) {
                return Err(Error::InvalidConfig(format!(
                    "prior for role {} is not used by pooling {}",
                    role.name(),
                    self.pooling
                )));
            }
        }
        Ok(())
    }

    pub fn prior(&self, role: ParamRole) -> Result<&DistSpec> {
        self.priors.get(&role).ok_or_else(|| {
            Error::InvalidConfig(format!("no prior configured for role {}", role.name()))
        })
    }

    pub fn set_prior(&mut self, role: ParamRole, dist: DistSpec) {
        self.priors.insert(role, dist);
    }

    /// Upper bound A of the Unif(0, A) noise prior, when that form is used.
    pub fn noise_sd_upper(&self) -> Option<f64> {
        match self.priors.get(&ParamRole::Sigma) {
            Some(DistSpec::Uniform { lower, upper }) if *lower == 0.0 => Some(*upper),
            _ => None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Ready-made parameter models matching the fitted examples.
pub mod presets {
    use super::*;

    fn spec(pooling: Pooling, priors: Vec<(ParamRole, DistSpec)>) -> ModelSpec {
        ModelSpec {
            pooling,
            priors: priors.into_iter().collect(),
        }
    }

    /// Single-unit noisy gamma process: mu ~ N+(10, 10), nu ~ t2+(0, 1),
    /// sigma ~ Unif(0, 100).
    pub fn single_unit() -> ModelSpec {
        spec(
            Pooling::NoPooling,
            vec![
                (
                    ParamRole::Mu,
                    DistSpec::TruncNormalLb0 { location: 10.0, scale: 10.0 },
                ),
                (
                    ParamRole::Nu,
                    DistSpec::StudentTLocScaleLb0 { location: 0.0, scale: 1.0, df: 2.0 },
                ),
                (ParamRole::Sigma, DistSpec::Uniform { lower: 0.0, upper: 100.0 }),
            ],
        )
    }

    /// No pooling across units with the crack-study scale priors.
    pub fn no_pooling() -> ModelSpec {
        spec(
            Pooling::NoPooling,
            vec![
                (
                    ParamRole::Mu,
                    DistSpec::TruncNormalLb0 { location: 1.0, scale: 0.2 },
                ),
                (
                    ParamRole::Nu,
                    DistSpec::StudentTLocScaleLb0 { location: 0.0, scale: 0.5, df: 3.0 },
                ),
                (ParamRole::Sigma, DistSpec::Uniform { lower: 0.0, upper: 10.0 }),
            ],
        )
    }

    /// Complete pooling: mu ~ N+(1, 0.2), nu ~ t3+(0, 0.5), sigma ~ Unif(0, 10).
    pub fn complete_pooling() -> ModelSpec {
        spec(
            Pooling::CompletePooling,
            vec![
                (
                    ParamRole::Mu,
                    DistSpec::TruncNormalLb0 { location: 1.0, scale: 0.2 },
                ),
                (
                    ParamRole::Nu,
                    DistSpec::StudentTLocScaleLb0 { location: 0.0, scale: 0.5, df: 3.0 },
                ),
                (ParamRole::Sigma, DistSpec::Uniform { lower: 0.0, upper: 10.0 }),
            ],
        )
    }

    /// Varying mean rate: mu_j ~ N+(mu_mu, sigma_mu) with
    /// mu_mu ~ N+(1, 0.2) and sigma_mu ~ Cauchy+(0, 1).
    pub fn varying_mu() -> ModelSpec {
        spec(
            Pooling::VaryingMu,
            vec![
                (
                    ParamRole::MuMu,
                    DistSpec::TruncNormalLb0 { location: 1.0, scale: 0.2 },
                ),
                (ParamRole::SigmaMu, DistSpec::HalfCauchy { scale: 1.0 }),
                (
                    ParamRole::Nu,
                    DistSpec::StudentTLocScaleLb0 { location: 0.0, scale: 0.5, df: 3.0 },
                ),
                (ParamRole::Sigma, DistSpec::Uniform { lower: 0.0, upper: 10.0 }),
            ],
        )
    }

    /// Varying coefficient of variation: nu_j ~ N+(mu_nu, sigma_nu) with
    /// mu_nu ~ t3+(0, 0.5) and sigma_nu ~ Cauchy+(0, 0.2).
    pub fn varying_nu() -> ModelSpec {
        spec(
            Pooling::VaryingNu,
            vec![
                (
                    ParamRole::Mu,
                    DistSpec::TruncNormalLb0 { location: 1.0, scale: 0.2 },
                ),
                (
                    ParamRole::MuNu,
                    DistSpec::StudentTLocScaleLb0 { location: 0.0, scale: 0.5, df: 3.0 },
                ),
                (ParamRole::SigmaNu, DistSpec::HalfCauchy { scale: 0.2 }),
                (ParamRole::Sigma, DistSpec::Uniform { lower: 0.0, upper: 10.0 }),
            ],
        )
    }

    /// Both parameters vary between units.
    pub fn varying_both() -> ModelSpec {
        spec(
            Pooling::VaryingBoth,
            vec![
                (
                    ParamRole::MuMu,
                    DistSpec::TruncNormalLb0 { location: 1.0, scale: 0.2 },
                ),
                (ParamRole::SigmaMu, DistSpec::HalfCauchy { scale: 1.0 }),
                (
                    ParamRole::MuNu,
                    DistSpec::StudentTLocScaleLb0 { location: 0.0, scale: 0.5, df: 3.0 },
                ),
                (ParamRole::SigmaNu, DistSpec::HalfCauchy { scale: 0.2 }),
                (ParamRole::Sigma, DistSpec::Uniform { lower: 0.0, upper: 10.0 }),
            ],
        )
    }

    pub fn by_pooling(pooling: Pooling) -> ModelSpec {
        match pooling {
            Pooling::NoPooling => no_pooling(),
            Pooling::CompletePooling => complete_pooling(),
            Pooling::VaryingMu => varying_mu(),
            Pooling::VaryingNu => varying_nu(),
            Pooling::VaryingBoth => varying_both(),
        }
    }
}

/// Unconstraining transform attached to one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// x = exp(u); for positive parameters and latent jumps.
    Exp,
    /// x = lower + (upper - lower) * sigmoid(u); for interval parameters.
    Logistic { lower: f64, upper: f64 },
    /// x = u; for unconstrained parameters.
    Identity,
}

fn softplus(u: f64) -> f64 {
    if u > 35.0 {
        u
    } else if u < -35.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

impl Transform {
    fn for_prior(dist: &DistSpec) -> Transform {
        match dist.support() {
            Support::Real => Transform::Identity,
            Support::Positive => Transform::Exp,
            Support::Interval(lower, upper) => Transform::Logistic { lower, upper },
        }
    }

    /// Returns (x, dx/du, log-Jacobian term, d log-Jacobian / du).
    pub fn apply(&self, u: f64) -> (f64, f64, f64, f64) {
        match *self {
            Transform::Exp => {
                let x = u.exp();
                (x, x, u, 1.0)
            }
            Transform::Logistic { lower, upper } => {
                let width = upper - lower;
                let s = 1.0 / (1.0 + (-u).exp());
                let x = lower + width * s;
                let dxdu = width * s * (1.0 - s);
                let logjac = width.ln() - softplus(u) - softplus(-u);
                (x, dxdu, logjac, 1.0 - 2.0 * s)
            }
            Transform::Identity => (u, 1.0, 0.0, 0.0),
        }
    }

    pub fn inverse(&self, x: f64) -> f64 {
        match *self {
            Transform::Exp => x.ln(),
            Transform::Logistic { lower, upper } => {
                let s = ((x - lower) / (upper - lower)).clamp(1e-15, 1.0 - 1e-15);
                (s / (1.0 - s)).ln()
            }
            Transform::Identity => x,
        }
    }
}

/// Where every parameter lives in the unconstrained vector.
///
/// Order: global parameters (in [`required_roles`] order), per-unit
/// parameters, then the latent jumps unit by unit.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub transforms: Vec<Transform>,
    pub dim: usize,
    pooling: Pooling,
    n_units: usize,
    globals: BTreeMap<ParamRole, usize>,
    unit_mu: Option<usize>,
    unit_nu: Option<usize>,
    unit_sigma: Option<usize>,
    jump_starts: Vec<usize>,
    unit_n_obs: Vec<usize>,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, dataset: &Dataset) -> Result<Self> {
        spec.validate()?;
        let n_units = dataset.n_units();
        let mut names = Vec::new();
        let mut transforms = Vec::new();
        let mut globals = BTreeMap::new();

        let per_unit_roles: &[ParamRole] = match spec.pooling {
            Pooling::NoPooling => &[ParamRole::Mu, ParamRole::Nu, ParamRole::Sigma],
            Pooling::CompletePooling => &[],
            Pooling::VaryingMu => &[ParamRole::Mu],
            Pooling::VaryingNu => &[ParamRole::Nu],
            Pooling::VaryingBoth => &[ParamRole::Mu, ParamRole::Nu],
        };

        if spec.pooling != Pooling::NoPooling {
            for &role in required_roles(spec.pooling) {
                if per_unit_roles.contains(&role) {
                    continue;
                }
                globals.insert(role, names.len());
                names.push(role.name().to_string());
                transforms.push(Transform::for_prior(spec.prior(role)?));
            }
        }

        // Per-unit parameters. A single no-pooling unit keeps the bare
        // names so the summary reads like the single-unit model.
        let mut unit_mu = None;
        let mut unit_nu = None;
        let mut unit_sigma = None;
        match spec.pooling {
            Pooling::NoPooling => {
                let start = names.len();
                for j in 0..n_units {
                    for &role in per_unit_roles {
                        names.push(indexed_name(role.name(), j, n_units));
                        transforms.push(Transform::for_prior(spec.prior(role)?));
                    }
                }
                // Strided layout: unit j's (mu, nu, sigma) sit together.
                unit_mu = Some(start);
                unit_nu = Some(start + 1);
                unit_sigma = Some(start + 2);
            }
            Pooling::CompletePooling => {}
            Pooling::VaryingMu | Pooling::VaryingNu | Pooling::VaryingBoth => {
                if per_unit_roles.contains(&ParamRole::Mu) {
                    unit_mu = Some(names.len());
                    for j in 0..n_units {
                        names.push(indexed_name("mu", j, n_units));
                        transforms.push(Transform::Exp);
                    }
                }
                if per_unit_roles.contains(&ParamRole::Nu) {
                    unit_nu = Some(names.len());
                    for j in 0..n_units {
                        names.push(indexed_name("nu", j, n_units));
                        transforms.push(Transform::Exp);
                    }
                }
            }
        }

        let mut jump_starts = Vec::with_capacity(n_units);
        let mut unit_n_obs = Vec::with_capacity(n_units);
        for (j, unit) in dataset.units.iter().enumerate() {
            jump_starts.push(names.len());
            unit_n_obs.push(unit.n_obs());
            for i in 1..=unit.n_obs() {
                names.push(format!("dz[{},{}]", j + 1, i));
                transforms.push(Transform::Exp);
            }
        }

        let dim = names.len();
        Ok(Self {
            names,
            transforms,
            dim,
            pooling: spec.pooling,
            n_units,
            globals,
            unit_mu,
            unit_nu,
            unit_sigma,
            jump_starts,
            unit_n_obs,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Index of a global parameter, if the variant has it.
    pub fn global_index(&self, role: ParamRole) -> Option<usize> {
        self.globals.get(&role).copied()
    }

    /// Index of the mean rate that governs unit `j`.
    pub fn mu_index(&self, j: usize) -> usize {
        match self.pooling {
            Pooling::NoPooling => self.unit_mu.unwrap() + 3 * j,
            Pooling::CompletePooling | Pooling::VaryingNu => self.globals[&ParamRole::Mu],
            Pooling::VaryingMu | Pooling::VaryingBoth => self.unit_mu.unwrap() + j,
        }
    }

    /// Index of the coefficient of variation that governs unit `j`.
    pub fn nu_index(&self, j: usize) -> usize {
        match self.pooling {
            Pooling::NoPooling => self.unit_nu.unwrap() + 3 * j,
            Pooling::CompletePooling | Pooling::VaryingMu => self.globals[&ParamRole::Nu],
            Pooling::VaryingNu | Pooling::VaryingBoth => self.unit_nu.unwrap() + j,
        }
    }

    /// Index of the noise sd that governs unit `j` (shared unless the
    /// variant is no-pooling, which has per-unit sigma_j).
    pub fn sigma_index(&self, j: usize) -> usize {
        match self.pooling {
            Pooling::NoPooling => self.unit_sigma.unwrap() + 3 * j,
            _ => self.globals[&ParamRole::Sigma],
        }
    }

    pub fn jump_range(&self, j: usize) -> Range<usize> {
        let start = self.jump_starts[j];
        start..start + self.unit_n_obs[j]
    }

    /// Index of the first latent jump; parameters before it are the
    /// reported (non-latent) ones.
    pub fn first_jump_index(&self) -> usize {
        self.jump_starts.first().copied().unwrap_or(self.dim)
    }

    pub fn check_vector(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Structure(format!(
                "parameter vector has length {}, layout needs {}",
                theta.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Maps an unconstrained vector to constrained parameters plus the
    /// total log-Jacobian of the transform.
    pub fn constrain(&self, theta_u: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_vector(theta_u)?;
        let mut x = Vec::with_capacity(self.dim);
        let mut logjac = 0.0;
        for (u, tr) in theta_u.iter().zip(&self.transforms) {
            let (xi, _, lj, _) = tr.apply(*u);
            x.push(xi);
            logjac += lj;
        }
        Ok((x, logjac))
    }

    /// Inverse of [`Self::constrain`] (up to roundoff).
    pub fn unconstrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(x)?;
        Ok(x.iter()
            .zip(&self.transforms)
            .map(|(xi, tr)| tr.inverse(*xi))
            .collect())
    }
}

/// Column name of a per-unit parameter; single-unit fits keep bare names.
pub fn unit_param_name(base: &str, j: usize, n_units: usize) -> String {
    if n_units == 1 {
        base.to_string()
    } else {
        format!("{}[{}]", base, j + 1)
    }
}

use unit_param_name as indexed_name;

/// Value and gradient of the log posterior at one point.
#[derive(Clone, Debug)]
pub struct LogDensityEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Additive pieces of the log posterior; useful for structural tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogPosteriorParts {
    pub data: f64,
    pub process: f64,
    pub prior: f64,
    pub jacobian: f64,
}

impl LogPosteriorParts {
    pub fn total(&self) -> f64 {
        self.data + self.process + self.prior + self.jacobian
    }
}

/// A model bound to a dataset: evaluates the joint log posterior and its
/// gradient over the unconstrained vector. Evaluations are pure; one
/// instance can be shared read-only across chains.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub spec: ModelSpec,
    pub dataset: Dataset,
    pub layout: ParamLayout,
    unit_dts: Vec<Vec<f64>>,
}

impl Posterior {
    pub fn new(spec: ModelSpec, dataset: Dataset) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::new(&spec, &dataset)?;
        let unit_dts = dataset.units.iter().map(|u| u.grid.increments()).collect();
        Ok(Self { spec, dataset, layout, unit_dts })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Log posterior value only.
    pub fn log_posterior(&self, theta_u: &[f64]) -> Result<f64> {
        Ok(self.eval(theta_u, false)?.0.total())
    }

    /// Log posterior with its analytic gradient.
    pub fn grad_log_posterior(&self, theta_u: &[f64]) -> Result<LogDensityEval> {
        let (parts, grad) = self.eval(theta_u, true)?;
        Ok(LogDensityEval {
            value: parts.total(),
            gradient: grad.expect("gradient requested"),
        })
    }

    /// The additive parts at an unconstrained point.
    pub fn log_posterior_parts(&self, theta_u: &[f64]) -> Result<LogPosteriorParts> {
        Ok(self.eval(theta_u, false)?.0)
    }

    fn eval(
        &self,
        theta_u: &[f64],
        want_grad: bool,
    ) -> Result<(LogPosteriorParts, Option<Vec<f64>>)> {
        self.layout.check_vector(theta_u)?;
        if theta_u.iter().any(|u| !u.is_finite()) {
            return Err(Error::Domain(
                "log posterior evaluated at non-finite parameters".into(),
            ));
        }

        let dim = self.layout.dim;
        let mut x = vec![0.0; dim];
        let mut dxdu = vec![0.0; dim];
        let mut djac = vec![0.0; dim];
        let mut parts = LogPosteriorParts::default();
        for k in 0..dim {
            let (xk, dk, lj, dj) = self.layout.transforms[k].apply(theta_u[k]);
            x[k] = xk;
            dxdu[k] = dk;
            djac[k] = dj;
            parts.jacobian += lj;
        }

        // Gradient with respect to the constrained coordinates.
        let mut gx = vec![0.0; dim];

        for (j, unit) in self.dataset.units.iter().enumerate() {
            let mu_ix = self.layout.mu_index(j);
            let nu_ix = self.layout.nu_index(j);
            let sg_ix = self.layout.sigma_index(j);
            let (mu, nu, sigma) = (x[mu_ix], x[nu_ix], x[sg_ix]);
            let nu2 = nu * nu;
            let rate = 1.0 / (mu * nu2);
            let ln_rate = -(mu.ln() + 2.0 * nu.ln());
            let sigma2 = sigma * sigma;
            let jumps = self.layout.jump_range(j);
            let dts = &self.unit_dts[j];

            // Data terms need the running latent level; their jump
            // gradient is a suffix sum of the residuals.
            let mut level = 0.0;
            let mut resid_over_s2 = Vec::with_capacity(unit.n_obs());
            for (i, &y) in unit.y.iter().enumerate() {
                level += x[jumps.start + i];
                let r = y - level;
                parts.data += -0.5 * r * r / sigma2 - sigma.ln() - LN_SQRT_2PI;
                if want_grad {
                    resid_over_s2.push(r / sigma2);
                    gx[sg_ix] += -1.0 / sigma + r * r / (sigma2 * sigma);
                }
            }
            if want_grad {
                let mut suffix = 0.0;
                for i in (0..unit.n_obs()).rev() {
                    suffix += resid_over_s2[i];
                    gx[jumps.start + i] += suffix;
                }
            }

            // Process terms: one gamma log density per jump.
            for (i, &dt) in dts.iter().enumerate() {
                let d = x[jumps.start + i];
                let shape = dt / nu2;
                if d <= 0.0 || !d.is_finite() || !shape.is_finite() || !rate.is_finite() {
                    parts.process = f64::NEG_INFINITY;
                    continue;
                }
                let ln_d = d.ln();
                parts.process +=
                    shape * ln_rate - ln_gamma_raw(shape) + (shape - 1.0) * ln_d - rate * d;
                if want_grad {
                    gx[jumps.start + i] += (shape - 1.0) / d - rate;
                    gx[mu_ix] += (rate * d - shape) / mu;
                    gx[nu_ix] += -(2.0 / nu)
                        * (shape * (ln_rate - digamma_raw(shape) + ln_d) + shape - rate * d);
                }
            }
        }

        // Parameter model.
        self.add_prior_terms(&x, &mut parts, want_grad.then_some(&mut gx))?;

        let grad = want_grad.then(|| {
            (0..dim)
                .map(|k| gx[k] * dxdu[k] + djac[k])
                .collect::<Vec<f64>>()
        });
        Ok((parts, grad))
    }

    fn add_prior_terms(
        &self,
        x: &[f64],
        parts: &mut LogPosteriorParts,
        mut gx: Option<&mut Vec<f64>>,
    ) -> Result<()> {
        let spec = &self.spec;
        let layout = &self.layout;
        let scalar = |ix: usize,
                          dist: &DistSpec,
                          parts: &mut LogPosteriorParts,
                          gx: &mut Option<&mut Vec<f64>>| {
            parts.prior += dist.logpdf(x[ix]);
            if let Some(g) = gx {
                g[ix] += dist.dlogpdf_dx(x[ix]);
            }
        };

        match spec.pooling {
            Pooling::NoPooling => {
                for j in 0..layout.n_units {
                    scalar(layout.mu_index(j), spec.prior(ParamRole::Mu)?, parts, &mut gx);
                    scalar(layout.nu_index(j), spec.prior(ParamRole::Nu)?, parts, &mut gx);
                    scalar(
                        layout.sigma_index(j),
                        spec.prior(ParamRole::Sigma)?,
                        parts,
                        &mut gx,
                    );
                }
            }
            Pooling::CompletePooling => {
                scalar(layout.mu_index(0), spec.prior(ParamRole::Mu)?, parts, &mut gx);
                scalar(layout.nu_index(0), spec.prior(ParamRole::Nu)?, parts, &mut gx);
                scalar(
                    layout.sigma_index(0),
                    spec.prior(ParamRole::Sigma)?,
                    parts,
                    &mut gx,
                );
            }
            Pooling::VaryingMu => {
                self.hierarchical_terms(
                    x,
                    parts,
                    &mut gx,
                    ParamRole::MuMu,
                    ParamRole::SigmaMu,
                    |j| layout.mu_index(j),
                )?;
                scalar(layout.nu_index(0), spec.prior(ParamRole::Nu)?, parts, &mut gx);
                scalar(
                    layout.sigma_index(0),
                    spec.prior(ParamRole::Sigma)?,
                    parts,
                    &mut gx,
                );
            }
            Pooling::VaryingNu => {
                self.hierarchical_terms(
                    x,
                    parts,
                    &mut gx,
                    ParamRole::MuNu,
                    ParamRole::SigmaNu,
                    |j| layout.nu_index(j),
                )?;
                scalar(layout.mu_index(0), spec.prior(ParamRole::Mu)?, parts, &mut gx);
                scalar(
                    layout.sigma_index(0),
                    spec.prior(ParamRole::Sigma)?,
                    parts,
                    &mut gx,
                );
            }
            Pooling::VaryingBoth => {
                self.hierarchical_terms(
                    x,
                    parts,
                    &mut gx,
                    ParamRole::MuMu,
                    ParamRole::SigmaMu,
                    |j| layout.mu_index(j),
                )?;
                self.hierarchical_terms(
                    x,
                    parts,
                    &mut gx,
                    ParamRole::MuNu,
                    ParamRole::SigmaNu,
                    |j| layout.nu_index(j),
                )?;
                scalar(
                    layout.sigma_index(0),
                    spec.prior(ParamRole::Sigma)?,
                    parts,
                    &mut gx,
                );
            }
        }
        Ok(())
    }

    /// Adds `theta_j ~ N+(loc, scale)` layers plus the hyperpriors on
    /// `loc` and `scale`. The truncation normalizer depends on the
    /// hyperparameters, so it contributes to their gradients too.
    fn hierarchical_terms(
        &self,
        x: &[f64],
        parts: &mut LogPosteriorParts,
        gx: &mut Option<&mut Vec<f64>>,
        loc_role: ParamRole,
        scale_role: ParamRole,
        unit_index: impl Fn(usize) -> usize,
    ) -> Result<()> {
        let layout = &self.layout;
        let loc_ix = layout
            .global_index(loc_role)
            .ok_or_else(|| Error::Structure(format!("layout lacks global {}", loc_role.name())))?;
        let scale_ix = layout
            .global_index(scale_role)
            .ok_or_else(|| Error::Structure(format!("layout lacks global {}", scale_role.name())))?;
        let loc = x[loc_ix];
        let scale = x[scale_ix];
        if !(scale > 0.0) || !scale.is_finite() || !loc.is_finite() {
            // Transform underflow/overflow: out of support, reject the point.
            parts.prior = f64::NEG_INFINITY;
            return Ok(());
        }
        let r = loc / scale;
        let mass_above_zero = norm_cdf(r);
        let hazard = norm_pdf(r) / mass_above_zero;

        for j in 0..layout.n_units() {
            let ix = unit_index(j);
            let t = (x[ix] - loc) / scale;
            parts.prior += -0.5 * t * t - scale.ln() - LN_SQRT_2PI - mass_above_zero.ln();
            if let Some(g) = gx {
                g[ix] += -t / scale;
                g[loc_ix] += t / scale - hazard / scale;
                g[scale_ix] += (-1.0 + t * t + r * hazard) / scale;
            }
        }

        // Hyperpriors.
        for (role, ix) in [(loc_role, loc_ix), (scale_role, scale_ix)] {
            let dist = self.spec.prior(role)?;
            parts.prior += dist.logpdf(x[ix]);
            if let Some(g) = gx {
                g[ix] += dist.dlogpdf_dx(x[ix]);
            }
        }
        Ok(())
    }

    /// Searches for a finite starting point: latent jumps from the
    /// observed increments repaired to be positive, globals from priors
    /// narrowed by a factor of 4.
    pub fn initialize(&self, rng: &mut RngState) -> Result<Vec<f64>> {
        let layout = &self.layout;
        let data_range = self.data_range().max(1e-12);
        let epsilon = 1e-6 * data_range;

        for _attempt in 0..100 {
            let mut x = vec![0.0; layout.dim];

            for (j, unit) in self.dataset.units.iter().enumerate() {
                let jumps = layout.jump_range(j);
                let mut prev = 0.0;
                for (i, &y) in unit.y.iter().enumerate() {
                    x[jumps.start + i] = (y - prev).max(epsilon);
                    prev = y;
                }
            }

            match self.spec.pooling {
                Pooling::NoPooling => {
                    for j in 0..layout.n_units() {
                        x[layout.mu_index(j)] =
                            positive_draw(&self.spec.prior(ParamRole::Mu)?.narrowed(4.0), rng);
                        x[layout.nu_index(j)] =
                            positive_draw(&self.spec.prior(ParamRole::Nu)?.narrowed(4.0), rng);
                        x[layout.sigma_index(j)] =
                            positive_draw(&self.spec.prior(ParamRole::Sigma)?.narrowed(4.0), rng);
                    }
                }
                Pooling::CompletePooling => {
                    for role in [ParamRole::Mu, ParamRole::Nu, ParamRole::Sigma] {
                        let ix = layout.global_index(role).unwrap();
                        x[ix] = positive_draw(&self.spec.prior(role)?.narrowed(4.0), rng);
                    }
                }
                Pooling::VaryingMu | Pooling::VaryingNu | Pooling::VaryingBoth => {
                    for &role in required_roles(self.spec.pooling) {
                        if let Some(ix) = layout.global_index(role) {
                            x[ix] = positive_draw(&self.spec.prior(role)?.narrowed(4.0), rng);
                        }
                    }
                    if matches!(self.spec.pooling, Pooling::VaryingMu | Pooling::VaryingBoth) {
                        let loc = x[layout.global_index(ParamRole::MuMu).unwrap()];
                        let scale = x[layout.global_index(ParamRole::SigmaMu).unwrap()];
                        for j in 0..layout.n_units() {
                            x[layout.mu_index(j)] = positive_draw(
                                &DistSpec::TruncNormalLb0 { location: loc, scale: scale / 4.0 },
                                rng,
                            );
                        }
                    }
                    if matches!(self.spec.pooling, Pooling::VaryingNu | Pooling::VaryingBoth) {
                        let loc = x[layout.global_index(ParamRole::MuNu).unwrap()];
                        let scale = x[layout.global_index(ParamRole::SigmaNu).unwrap()];
                        for j in 0..layout.n_units() {
                            x[layout.nu_index(j)] = positive_draw(
                                &DistSpec::TruncNormalLb0 { location: loc, scale: scale / 4.0 },
                                rng,
                            );
                        }
                    }
                }
            }

            let theta_u = layout.unconstrain(&x)?;
            if let Ok(value) = self.log_posterior(&theta_u) {
                if value.is_finite() {
                    return Ok(theta_u);
                }
            }
        }
        Err(Error::InitFailed(
            "no finite log posterior in 100 initialization attempts".into(),
        ))
    }

    fn data_range(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for unit in &self.dataset.units {
            for &y in &unit.y {
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// A draw from `dist` forced into the open interior its transform expects
/// (scale parameters must start strictly positive).
fn positive_draw(dist: &DistSpec, rng: &mut RngState) -> f64 {
    let x = dist.sample(rng);
    if let Support::Interval(lo, hi) = dist.support() {
        return x.clamp(lo + 1e-9 * (hi - lo), hi - 1e-9 * (hi - lo));
    }
    x.max(1e-12)
}
