#![allow(dead_code)] // shared across several test binaries, each using a subset

//! Shared helpers and independent numerical oracles for the integration
//! and acceptance suites. The oracles deliberately avoid the library's
//! closed-form routes: log-gamma comes from a shifted Stirling series and
//! the incomplete gamma from adaptive quadrature.

use noisygp::process::{Dataset, GridSpec, ParamRecipe, SimulateConfig, TimeGrid, UnitSeries};
use noisygp::rng::RngState;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Stirling-series log-gamma with a 30-step recurrence shift; accurate to
/// well below 1e-13 relative for x > 0.
pub fn ln_gamma_oracle(x: f64) -> f64 {
    const COEFS: [f64; 10] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
        43_867.0 / 244_188.0,
        -174_611.0 / 125_400.0,
    ];
    let mut correction = 0.0;
    let mut t = x;
    while t < x + 30.0 {
        correction += t.ln();
        t += 1.0;
    }
    let z = t;
    let mut series = 0.0;
    let mut zpow = z;
    for c in COEFS {
        series += c / zpow;
        zpow *= z * z;
    }
    (z - 0.5) * z.ln() - z + LN_SQRT_2PI + series - correction
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Regularized lower incomplete gamma by quadrature of the density. The
/// substitution t = u^(1/a) removes the endpoint singularity for a < 1.
pub fn reg_lower_inc_gamma_oracle(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ln_norm = ln_gamma_oracle(a);
    if a < 1.0 {
        let f = move |u: f64| {
            if u <= 0.0 {
                (-ln_norm).exp() / a
            } else {
                ((-u.powf(1.0 / a)) - ln_norm).exp() / a
            }
        };
        adaptive_simpson(&f, 0.0, x.powf(a), 1e-13).min(1.0)
    } else {
        let f = move |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                ((a - 1.0) * t.ln() - t - ln_norm).exp()
            }
        };
        adaptive_simpson(&f, 0.0, x, 1e-13).min(1.0)
    }
}

/// The single-unit study recipe: 20 increments ~ Unif(0.8, 1.3) with
/// mu = 10, nu = 1.119, sigma = 4.
pub fn single_unit_recipe() -> SimulateConfig {
    SimulateConfig {
        n_units: 1,
        grid: GridSpec::UniformIncrements { n: 20, lower: 0.8, upper: 1.3 },
        mu: ParamRecipe::Fixed { value: 10.0 },
        nu: ParamRecipe::Fixed { value: 1.119 },
        sigma: 4.0,
        threshold: None,
    }
}

/// Crack-style study: 10 units on a shared 0.1..1.0 grid, unit mean rates
/// from N+(0.40, 0.07), nu = 0.21, noise sd 0.025, threshold 0.4.
pub fn crack_like_recipe() -> SimulateConfig {
    SimulateConfig {
        n_units: 10,
        grid: GridSpec::Times { times: (1..=10).map(|i| i as f64 * 0.1).collect() },
        mu: ParamRecipe::TruncNormal { location: 0.40, scale: 0.07 },
        nu: ParamRecipe::Fixed { value: 0.21 },
        sigma: 0.025,
        threshold: Some(0.4),
    }
}

/// Same geometry but a complete-pooling truth (every unit shares mu).
pub fn crack_pooled_recipe(n_units: usize) -> SimulateConfig {
    SimulateConfig {
        n_units,
        grid: GridSpec::Times { times: (1..=10).map(|i| i as f64 * 0.1).collect() },
        mu: ParamRecipe::Fixed { value: 0.40 },
        nu: ParamRecipe::Fixed { value: 0.21 },
        sigma: 0.025,
        threshold: Some(0.4),
    }
}

/// A seeded random `keep`-subset of a single-unit dataset, preserving
/// observation order (the small-data construction).
pub fn random_subset(data: &Dataset, keep: usize, seed: u64) -> Dataset {
    let unit = &data.units[0];
    let n = unit.n_obs();
    let mut rng = RngState::from_seed(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.uniform() * (i + 1) as f64) as usize;
        idx.swap(i, j);
    }
    let mut kept: Vec<usize> = idx[..keep].to_vec();
    kept.sort_unstable();
    let times: Vec<f64> = std::iter::once(0.0)
        .chain(kept.iter().map(|&i| unit.grid.obs_times()[i]))
        .collect();
    let y: Vec<f64> = kept.iter().map(|&i| unit.y[i]).collect();
    Dataset::new(
        vec![UnitSeries::new(TimeGrid::new(times).unwrap(), y, None).unwrap()],
        None,
    )
    .unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
