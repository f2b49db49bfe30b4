//! Prior distribution families.
//!
//! [`DistSpec`] covers every distribution the degradation models use:
//! Gaussian, zero-truncated Gaussian / Student-t / Cauchy, uniform, and
//! gamma. Truncated families carry their renormalization constant in the
//! log density, so all densities integrate to one over their support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::special::{
    self, norm_cdf, norm_logpdf, sample_gamma, sample_std_cauchy, sample_std_normal,
    sample_std_t, student_t_cdf,
};

/// Support of a distribution; drives the unconstraining transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    Real,
    Positive,
    Interval(f64, f64),
}

/// A fully specified prior distribution.
///
/// Serialized with a `kind` tag so configs read naturally, e.g.
/// `{ kind = "trunc_normal_lb0", location = 1.0, scale = 0.2 }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    /// N(mean, sd) on the whole line; `sd` is a standard deviation.
    Normal { mean: f64, sd: f64 },
    /// N(location, scale) truncated below at zero, written N+ elsewhere.
    TruncNormalLb0 { location: f64, scale: f64 },
    /// Location-scale Student-t truncated below at zero, written t+_df.
    StudentTLocScaleLb0 { location: f64, scale: f64, df: f64 },
    /// Uniform(lower, upper).
    Uniform { lower: f64, upper: f64 },
    /// Half-Cauchy with location zero, written Cauchy+(0, scale).
    HalfCauchy { scale: f64 },
    /// Ga(shape, rate).
    Gamma { shape: f64, rate: f64 },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidDist(msg));
        match *self {
            DistSpec::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
                    return fail(format!("normal requires finite mean and sd > 0, got ({mean}, {sd})"));
                }
            }
            DistSpec::TruncNormalLb0 { location, scale } => {
                if !location.is_finite() || !scale.is_finite() || scale <= 0.0 {
                    return fail(format!(
                        "trunc_normal_lb0 requires finite location and scale > 0, got ({location}, {scale})"
                    ));
                }
            }
            DistSpec::StudentTLocScaleLb0 { location, scale, df } => {
                if !location.is_finite() || !scale.is_finite() || scale <= 0.0 {
                    return fail(format!(
                        "student_t_loc_scale_lb0 requires finite location and scale > 0, got ({location}, {scale})"
                    ));
                }
                if !df.is_finite() || df < 1.0 {
                    return fail(format!("student_t_loc_scale_lb0 requires df >= 1, got {df}"));
                }
            }
            DistSpec::Uniform { lower, upper } => {
                if !lower.is_finite() || !upper.is_finite() || lower >= upper {
                    return fail(format!("uniform requires lower < upper, got ({lower}, {upper})"));
                }
            }
            DistSpec::HalfCauchy { scale } => {
                if !scale.is_finite() || scale <= 0.0 {
                    return fail(format!("half_cauchy requires scale > 0, got {scale}"));
                }
            }
            DistSpec::Gamma { shape, rate } => {
                if !shape.is_finite() || shape <= 0.0 || !rate.is_finite() || rate <= 0.0 {
                    return fail(format!("gamma requires shape > 0 and rate > 0, got ({shape}, {rate})"));
                }
            }
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        match *self {
            DistSpec::Normal { .. } => Support::Real,
            DistSpec::Uniform { lower, upper } => Support::Interval(lower, upper),
            _ => Support::Positive,
        }
    }

    /// Log density at `x`; `-inf` outside the support.
    ///
    /// Zero-truncated families include the renormalization for the mass
    /// above zero (exactly `ln 2` when the location is zero).
    pub fn logpdf(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } => norm_logpdf(x, mean, sd),
            DistSpec::TruncNormalLb0 { location, scale } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                norm_logpdf(x, location, scale) - norm_cdf(location / scale).ln()
            }
            DistSpec::StudentTLocScaleLb0 { location, scale, df } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let u = (x - location) / scale;
                let unnorm = special::ln_gamma(0.5 * (df + 1.0)).expect("df >= 1")
                    - special::ln_gamma(0.5 * df).expect("df >= 1")
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (1.0 + u * u / df).ln();
                let mass_above_zero = student_t_cdf(location / scale, df).expect("df >= 1");
                unnorm - mass_above_zero.ln()
            }
            DistSpec::Uniform { lower, upper } => {
                if x < lower || x > upper {
                    f64::NEG_INFINITY
                } else {
                    -(upper - lower).ln()
                }
            }
            DistSpec::HalfCauchy { scale } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let u = x / scale;
                (2.0 / std::f64::consts::PI).ln() - scale.ln() - (1.0 + u * u).ln()
            }
            DistSpec::Gamma { shape, rate } => special::gamma_logpdf_raw(x, shape, rate),
        }
    }

    /// d/dx of [`Self::logpdf`] inside the support.
    pub fn dlogpdf_dx(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } | DistSpec::TruncNormalLb0 { location: mean, scale: sd } => {
                -(x - mean) / (sd * sd)
            }
            DistSpec::StudentTLocScaleLb0 { location, scale, df } => {
                let u = (x - location) / scale;
                -(df + 1.0) * u / ((df + u * u) * scale)
            }
            DistSpec::Uniform { .. } => 0.0,
            DistSpec::HalfCauchy { scale } => -2.0 * x / (scale * scale + x * x),
            DistSpec::Gamma { shape, rate } => (shape - 1.0) / x - rate,
        }
    }

    /// CDF where a closed or special-function form exists.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        match *self {
            DistSpec::Normal { mean, sd } => Some(norm_cdf((x - mean) / sd)),
            DistSpec::TruncNormalLb0 { location, scale } => {
                if x < 0.0 {
                    return Some(0.0);
                }
                let c = norm_cdf(location / scale);
                Some(((norm_cdf((x - location) / scale) - (1.0 - c)) / c).clamp(0.0, 1.0))
            }
            DistSpec::StudentTLocScaleLb0 { location, scale, df } => {
                if x < 0.0 {
                    return Some(0.0);
                }
                let c = student_t_cdf(location / scale, df).ok()?;
                let f = student_t_cdf((x - location) / scale, df).ok()?;
                Some(((f - (1.0 - c)) / c).clamp(0.0, 1.0))
            }
            DistSpec::Uniform { lower, upper } => {
                Some(((x - lower) / (upper - lower)).clamp(0.0, 1.0))
            }
            DistSpec::HalfCauchy { scale } => {
                if x < 0.0 {
                    return Some(0.0);
                }
                Some(2.0 / std::f64::consts::PI * (x / scale).atan())
            }
            DistSpec::Gamma { shape, rate } => special::gamma_cdf(x, shape, rate).ok(),
        }
    }

    /// One draw. Zero-truncated families with nonnegative location use
    /// rejection from the untruncated family (acceptance at least 1/2).
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } => mean + sd * sample_std_normal(rng),
            DistSpec::TruncNormalLb0 { location, scale } => {
                sample_lb0(rng, |r| location + scale * sample_std_normal(r))
            }
            DistSpec::StudentTLocScaleLb0 { location, scale, df } => {
                sample_lb0(rng, |r| location + scale * sample_std_t(df, r))
            }
            DistSpec::Uniform { lower, upper } => rng.uniform_range(lower, upper),
            DistSpec::HalfCauchy { scale } => sample_lb0(rng, |r| scale * sample_std_cauchy(r)),
            DistSpec::Gamma { shape, rate } => sample_gamma(shape, rate, rng),
        }
    }

    /// The same family with dispersion shrunk by `factor` around its
    /// center; used to draw safe starting points.
    pub fn narrowed(&self, factor: f64) -> DistSpec {
        match *self {
            DistSpec::Normal { mean, sd } => DistSpec::Normal { mean, sd: sd / factor },
            DistSpec::TruncNormalLb0 { location, scale } => DistSpec::TruncNormalLb0 {
                location,
                scale: scale / factor,
            },
            DistSpec::StudentTLocScaleLb0 { location, scale, df } => DistSpec::StudentTLocScaleLb0 {
                location,
                scale: scale / factor,
                df,
            },
            DistSpec::Uniform { lower, upper } => {
                let mid = 0.5 * (lower + upper);
                let half = 0.5 * (upper - lower) / factor;
                DistSpec::Uniform { lower: mid - half, upper: mid + half }
            }
            DistSpec::HalfCauchy { scale } => DistSpec::HalfCauchy { scale: scale / factor },
            DistSpec::Gamma { shape, rate } => {
                // Keep the mean, divide the variance by factor^2.
                let f2 = factor * factor;
                DistSpec::Gamma { shape: shape * f2, rate: rate * f2 }
            }
        }
    }
}

fn sample_lb0(rng: &mut RngState, mut draw: impl FnMut(&mut RngState) -> f64) -> f64 {
    loop {
        let x = draw(rng);
        if x >= 0.0 {
            return x;
        }
    }
}
