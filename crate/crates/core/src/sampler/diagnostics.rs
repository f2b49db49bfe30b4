//! Convergence diagnostics: split R-hat, autocorrelation-based effective
//! sample sizes, and posterior quantile summaries.

use serde::{Deserialize, Serialize};

use super::Draws;
use crate::error::{Error, Result};

/// Per-parameter posterior summary and mixing diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q50: f64,
    pub q97_5: f64,
    pub ess: f64,
    /// Split potential scale reduction; `None` with a single chain.
    pub rhat: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub params: Vec<ParamDiagnostics>,
    pub divergences: usize,
    pub n_chains: usize,
    pub n_per_chain: usize,
    pub max_tree_depth_hits: usize,
}

impl DiagnosticsReport {
    pub fn param(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn worst_rhat(&self) -> Option<f64> {
        self.params
            .iter()
            .filter_map(|p| p.rhat)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    pub fn min_ess(&self) -> Option<f64> {
        self.params
            .iter()
            .map(|p| p.ess)
            .fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.min(e))))
    }
}

/// Empirical quantile with linear interpolation on a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Splits each chain in half, dropping the middle element of odd chains.
fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut halves = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let n = c.len();
        let half = n / 2;
        halves.push(&c[..half]);
        halves.push(&c[n - half..]);
    }
    halves
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Split potential scale reduction over two or more chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let halves = split_chains(chains);
    let n = halves.iter().map(|h| h.len()).min()? as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().zip(&means).map(|(h, m)| sample_var(h, *m)).collect();
    let grand = mean(&means);
    let between = n * sample_var(&means, grand);
    let within = mean(&vars);
    if within <= 0.0 {
        // Zero within-chain variance: converged if the halves agree,
        // otherwise maximally non-mixing.
        return Some(if between > 1e-300 { f64::INFINITY } else { 1.0 });
    }
    Some((((n - 1.0) / n) + between / (within * n)).sqrt())
}

/// Effective sample size from chain autocorrelations, truncated by
/// Geyer's initial monotone positive sequence. Chains are split first.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let halves = split_chains(chains);
    let m = halves.len();
    let n = match halves.iter().map(|h| h.len()).min() {
        Some(n) if n >= 4 => n,
        _ => return f64::NAN,
    };
    let total = (m * n) as f64;

    let means: Vec<f64> = halves.iter().map(|h| mean(&h[..n])).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| sample_var(&h[..n], *mu))
        .collect();
    let w = mean(&vars);
    let var_plus = if m > 1 {
        let grand = mean(&means);
        (n as f64 - 1.0) / n as f64 * w + sample_var(&means, grand)
    } else {
        (n as f64 - 1.0) / n as f64 * w
    };
    if var_plus <= 0.0 || !var_plus.is_finite() {
        return f64::NAN;
    }

    // Mean autocovariance across chains at each lag (biased 1/n scaling).
    let acov = |t: usize| -> f64 {
        let mut total_cov = 0.0;
        for (h, mu) in halves.iter().zip(&means) {
            let mut s = 0.0;
            for i in 0..n - t {
                s += (h[i] - mu) * (h[i + t] - mu);
            }
            total_cov += s / n as f64;
        }
        total_cov / m as f64
    };

    let rho = |t: usize| 1.0 - (w - acov(t)) / var_plus;

    // Sum Geyer lag pairs while they stay positive, enforcing that the
    // pair sums are nonincreasing.
    let mut tau = 1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 1usize;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let capped = pair.min(prev_pair);
        tau += 2.0 * capped;
        prev_pair = capped;
        t += 2;
    }

    (total / tau).min(total)
}

/// Computes per-parameter summaries and mixing diagnostics.
///
/// Needs at least two chains with 100 draws each for R-hat; with a single
/// chain the report is still produced and `rhat` is `None`.
pub fn diagnostics(draws: &Draws) -> Result<DiagnosticsReport> {
    if draws.n_per_chain == 0 {
        return Err(Error::Structure("no draws to diagnose".into()));
    }
    let rhat_available = draws.n_chains >= 2 && draws.n_per_chain >= 100;
    let mut params = Vec::with_capacity(draws.dim());
    for ix in 0..draws.dim() {
        let chains: Vec<Vec<f64>> = (0..draws.n_chains)
            .map(|c| draws.chain_column(c, ix))
            .collect();
        let all: Vec<f64> = chains.iter().flatten().copied().collect();
        let m = mean(&all);
        let sd = if all.len() > 1 { sample_var(&all, m).sqrt() } else { 0.0 };
        let mut sorted = all;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        params.push(ParamDiagnostics {
            name: draws.names[ix].clone(),
            mean: m,
            sd,
            q2_5: quantile(&sorted, 0.025),
            q50: quantile(&sorted, 0.5),
            q97_5: quantile(&sorted, 0.975),
            ess: ess(&chains),
            rhat: if rhat_available { split_rhat(&chains) } else { None },
        });
    }
    Ok(DiagnosticsReport {
        params,
        divergences: draws.divergence_count(),
        n_chains: draws.n_chains,
        n_per_chain: draws.n_per_chain,
        max_tree_depth_hits: 0,
    })
}

/// Renders the summary in the usual reporting layout:
/// `Parameter Mean 2.5% 50% 97.5% n_eff Rhat`. Latent jump rows are
/// skipped unless `include_latent` is set.
pub fn summary_table(report: &DiagnosticsReport, include_latent: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>8} {:>6}\n",
        "Parameter", "Mean", "2.5%", "50%", "97.5%", "n_eff", "Rhat"
    ));
    for p in &report.params {
        if !include_latent && p.name.starts_with("dz[") {
            continue;
        }
        let rhat = p
            .rhat
            .map(|r| format!("{r:.2}"))
            .unwrap_or_else(|| "n/a".to_string());
        out.push_str(&format!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.0} {:>6}\n",
            p.name, p.mean, p.q2_5, p.q50, p.q97_5, p.ess, rhat
        ));
    }
    out.push_str(&format!(
        "divergences: {} (chains: {}, draws/chain: {})\n",
        report.divergences, report.n_chains, report.n_per_chain
    ));
    out
}
