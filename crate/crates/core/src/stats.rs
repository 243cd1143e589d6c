//! Scalar density functions, quantiles, and small-sample statistics shared
//! across the models and the sampler.

use crate::error::{Error, Result};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Normal prior specification, N(mean, sd^2).
#[derive(Clone, Copy, Debug)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        ln_normal_pdf(x, self.mean, self.sd)
    }
}

pub fn ln_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

/// Log density of Gamma(shape, rate) at `x`; `-inf` for `x <= 0`.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log density of a half-normal with the given scale; support x >= 0.
pub fn ln_half_normal_pdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - 0.5 * z * z
}

/// Log density of Exponential(rate); support x >= 0.
pub fn ln_exponential_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    rate.ln() - rate * x
}

pub use statrs::function::gamma::ln_gamma as ln_gamma_fn;

/// Quantile of Gamma(shape, rate). Errors if the bracket cannot be
/// established (non-finite or inverted endpoints).
pub fn gamma_quantile(p: f64, shape: f64, rate: f64) -> Result<f64> {
    let dist = statrs::distribution::Gamma::new(shape, rate).map_err(|e| {
        Error::Quadrature(format!(
            "invalid gamma parameters shape={shape}, rate={rate}: {e}"
        ))
    })?;
    let q = dist.inverse_cdf(p);
    if !q.is_finite() || q < 0.0 {
        return Err(Error::Quadrature(format!(
            "gamma quantile p={p} did not converge for shape={shape}, rate={rate}"
        )));
    }
    Ok(q)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Type-7 quantile (linear interpolation of order statistics) on an
/// already sorted slice.
pub fn quantile_type7_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

pub fn quantile_type7(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile input"));
    quantile_type7_sorted(&v, p)
}

/// log(sum(exp(x_i))) with the usual max shift; ignores -inf entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}
