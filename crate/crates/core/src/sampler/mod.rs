//! Gradient-based MCMC: dynamic Hamiltonian Monte Carlo with trajectory
//! doubling, a no-U-turn termination criterion and multinomial state
//! selection, dual-averaging step-size adaptation, diagonal mass-matrix
//! estimation during warmup, and convergence diagnostics.

mod adapt;
mod diagnostics;
mod nuts;

pub use diagnostics::{diagnostics, quantile, summary_table, DiagnosticsReport, ParamDiagnostics};
pub use nuts::{leapfrog, PhasePoint};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Posterior};
use crate::process::Dataset;
use crate::rng::RngState;

/// Energy error beyond which a leapfrog trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable log-density target.
pub trait LogDensityModel: Sync {
    fn dim(&self) -> usize;

    /// Log density at `position`, writing the gradient into `grad`.
    /// Non-finite values signal that the point is out of support.
    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// A target the sampler can report draws from: adds naming and the map
/// from the unconstrained chain state to the constrained draw row.
pub trait SampleSpace: LogDensityModel {
    fn names(&self) -> Vec<String>;

    /// Writes the constrained representation of `position` into `out`.
    fn to_constrained(&self, position: &[f64], out: &mut [f64]);

    /// A starting point for one chain.
    fn initial_position(&self, rng: &mut RngState) -> Result<Vec<f64>>;
}

impl LogDensityModel for Posterior {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        match self.grad_log_posterior(position) {
            Ok(eval) => {
                grad.copy_from_slice(&eval.gradient);
                eval.value
            }
            Err(_) => {
                grad.fill(0.0);
                f64::NEG_INFINITY
            }
        }
    }
}

impl SampleSpace for Posterior {
    fn names(&self) -> Vec<String> {
        self.layout.names.clone()
    }

    fn to_constrained(&self, position: &[f64], out: &mut [f64]) {
        let (x, _) = self
            .layout
            .constrain(position)
            .expect("dimension checked by caller");
        out.copy_from_slice(&x);
    }

    fn initial_position(&self, rng: &mut RngState) -> Result<Vec<f64>> {
        self.initialize(rng)
    }
}

/// Chain and adaptation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    /// Post-warmup draws kept per chain.
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Multiplies the adapted step size for the sampling phase; 1 for
    /// normal operation, larger values stress divergence behaviour.
    pub step_size_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_samples: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
            step_size_scale: 1.0,
        }
    }
}

impl SamplerConfig {
    /// Single-unit fits: four chains of 10,000 with 3,000 warmup.
    pub fn single_unit_default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 3000,
            n_samples: 7000,
            ..Self::default()
        }
    }

    /// Pooled fits: six chains of 1,000 after 1,000 warmup.
    pub fn pooled_default() -> Self {
        Self {
            n_chains: 6,
            n_warmup: 1000,
            n_samples: 1000,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_warmup == 0 || self.n_samples == 0 {
            return Err(Error::InvalidConfig(
                "chains, warmup and samples must all be positive".into(),
            ));
        }
        if !(self.target_accept > 0.6 && self.target_accept < 0.99) {
            return Err(Error::InvalidConfig(format!(
                "target_accept must lie in (0.6, 0.99), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 14 {
            return Err(Error::InvalidConfig(format!(
                "max_tree_depth must be in 1..=14, got {}",
                self.max_tree_depth
            )));
        }
        if !(self.step_size_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "step_size_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Posterior draws in constrained space with per-draw sampler metadata,
/// ordered by (chain, iteration).
#[derive(Clone, Debug, PartialEq)]
pub struct Draws {
    pub names: Vec<String>,
    pub n_chains: usize,
    pub n_per_chain: usize,
    data: Vec<f64>,
    pub chain: Vec<u16>,
    pub divergent: Vec<bool>,
    pub energy: Vec<f64>,
    pub tree_depth: Vec<u8>,
}

impl Draws {
    pub fn n_rows(&self) -> usize {
        self.n_chains * self.n_per_chain
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.dim();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let ix = self
            .column_index(name)
            .ok_or_else(|| Error::Structure(format!("draws have no column '{name}'")))?;
        Ok(self.column_by_index(ix))
    }

    pub fn column_by_index(&self, ix: usize) -> Vec<f64> {
        let d = self.dim();
        self.data.iter().skip(ix).step_by(d).copied().collect()
    }

    /// One chain's values for a column, in iteration order.
    pub fn chain_column(&self, chain: usize, ix: usize) -> Vec<f64> {
        let d = self.dim();
        let start = chain * self.n_per_chain;
        (0..self.n_per_chain)
            .map(|i| self.data[(start + i) * d + ix])
            .collect()
    }

    pub fn divergence_count(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub(crate) fn from_parts(
        names: Vec<String>,
        n_chains: usize,
        n_per_chain: usize,
        data: Vec<f64>,
        chain: Vec<u16>,
        divergent: Vec<bool>,
        energy: Vec<f64>,
        tree_depth: Vec<u8>,
    ) -> Self {
        Self { names, n_chains, n_per_chain, data, chain, divergent, energy, tree_depth }
    }
}

struct ChainOutput {
    data: Vec<f64>,
    divergent: Vec<bool>,
    energy: Vec<f64>,
    tree_depth: Vec<u8>,
}

/// Runs the sampler on a model/dataset pair.
pub fn run(spec: &ModelSpec, dataset: &Dataset, config: &SamplerConfig) -> Result<Draws> {
    let posterior = Posterior::new(spec.clone(), dataset.clone())?;
    run_target(&posterior, config)
}

/// Runs the sampler on any [`SampleSpace`] target.
///
/// Chains run in parallel; chain `c` owns the split stream `c` of the
/// seed, so results are identical however the chains are scheduled.
/// Chains whose initialization fails are dropped; only a full wipe-out is
/// an error.
pub fn run_target<T: SampleSpace + ?Sized>(target: &T, config: &SamplerConfig) -> Result<Draws> {
    config.validate()?;
    let root = RngState::from_seed(config.seed);

    let chain_results: Vec<Result<ChainOutput>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = root.split(c as u64);
            nuts::run_chain(target, config, &mut rng)
        })
        .collect();

    let mut outputs = Vec::with_capacity(config.n_chains);
    let mut first_err = None;
    for res in chain_results {
        match res {
            Ok(out) => outputs.push(out),
            Err(e) => first_err = Some(e),
        }
    }
    if outputs.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::Sampling("no chains ran".into())));
    }

    let names = target.names();
    let dim = names.len();
    let n_chains = outputs.len();
    let n_per_chain = config.n_samples;
    let mut data = Vec::with_capacity(n_chains * n_per_chain * dim);
    let mut chain = Vec::with_capacity(n_chains * n_per_chain);
    let mut divergent = Vec::with_capacity(n_chains * n_per_chain);
    let mut energy = Vec::with_capacity(n_chains * n_per_chain);
    let mut tree_depth = Vec::with_capacity(n_chains * n_per_chain);
    for (c, out) in outputs.into_iter().enumerate() {
        data.extend(out.data);
        chain.extend(std::iter::repeat_n(c as u16, n_per_chain));
        divergent.extend(out.divergent);
        energy.extend(out.energy);
        tree_depth.extend(out.tree_depth);
    }

    Ok(Draws::from_parts(
        names, n_chains, n_per_chain, data, chain, divergent, energy, tree_depth,
    ))
}
