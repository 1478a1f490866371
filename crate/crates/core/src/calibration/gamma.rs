//! Gamma distribution: maximum-likelihood fit, CDF and quantile.

use serde::{Deserialize, Serialize};

use super::special::{digamma, ln_gamma, regularized_gamma_p, trigamma};
use crate::error::{Error, Result};

/// Shape `k` and scale `theta`, both positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    shape: f64,
    scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::Domain(format!(
                "gamma parameters must be positive and finite, got shape {shape}, scale {scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn std_dev(&self) -> f64 {
        self.shape.sqrt() * self.scale
    }
}

pub fn gamma_cdf(params: &GammaParams, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    regularized_gamma_p(params.shape, x / params.scale)
}

pub fn gamma_pdf(params: &GammaParams, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (k, theta) = (params.shape, params.scale);
    ((k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln()).exp()
}

const QUANTILE_TOL: f64 = 1e-13;
const QUANTILE_MAX_ITER: usize = 2_000;

/// Inverse CDF. Bisection on a bracket starting at `[0, mean + 20 sd]`
/// (doubled until it holds `p`), with Newton steps taken whenever they land
/// inside the current bracket.
pub fn gamma_quantile(params: &GammaParams, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level {p} is outside (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = params.mean() + 20.0 * params.std_dev();
    while gamma_cdf(params, hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numeric(format!("cannot bracket quantile {p}")));
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..QUANTILE_MAX_ITER {
        let err = gamma_cdf(params, x) - p;
        if err.abs() <= QUANTILE_TOL {
            return Ok(x);
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        let density = gamma_pdf(params, x);
        let newton = x - err / density;
        x = if density > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }

    // Bracket collapsed to adjacent doubles: take the closer end.
    let best = [lo, x, hi]
        .into_iter()
        .filter(|&c| c > 0.0)
        .min_by(|a, b| {
            let ea = (gamma_cdf(params, *a) - p).abs();
            let eb = (gamma_cdf(params, *b) - p).abs();
            ea.total_cmp(&eb)
        })
        .unwrap_or(hi);
    if (gamma_cdf(params, best) - p).abs() > 1e-9 {
        return Err(Error::Numeric(format!(
            "quantile {p} did not converge for shape {}, scale {}",
            params.shape, params.scale
        )));
    }
    Ok(best)
}

/// Outcome of [`fit_gamma`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    pub params: GammaParams,
    /// False when Newton failed and `params` is the method-of-moments estimate.
    pub converged: bool,
    pub iterations: usize,
}

pub const MIN_FIT_SAMPLES: usize = 8;
const FIT_MAX_ITER: usize = 100;
const FIT_REL_TOL: f64 = 1e-10;

/// Method-of-moments estimate from the sample mean and population variance.
pub fn moments_estimate(mean: f64, variance: f64) -> Result<GammaParams> {
    GammaParams::new(mean * mean / variance, variance / mean)
}

/// Maximum-likelihood fit. Newton iterations on the shape solve
/// `ln k - digamma(k) = ln(mean) - mean(ln x)`, starting from the
/// method-of-moments estimate; scale follows as `mean / k`.
pub fn fit_gamma(samples: &[f64]) -> Result<GammaFit> {
    let n = samples.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "gamma fit needs at least {MIN_FIT_SAMPLES} samples, got {n}"
        )));
    }
    if let Some(bad) = samples.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!("gamma samples must be positive, got {bad}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if !(variance > 0.0) {
        return Err(Error::DegenerateSamples("samples have zero variance".into()));
    }
    let mom = moments_estimate(mean, variance)?;

    let mean_log = samples.iter().map(|x| x.ln()).sum::<f64>() / nf;
    let target = mean.ln() - mean_log;
    let mut k = mom.shape();
    if target > 0.0 && target.is_finite() {
        for iter in 1..=FIT_MAX_ITER {
            let f = k.ln() - digamma(k) - target;
            let slope = 1.0 / k - trigamma(k);
            let mut next = k - f / slope;
            if !(next > 0.0) {
                next = 0.5 * k;
            }
            if !next.is_finite() {
                break;
            }
            let step = (next - k).abs();
            k = next;
            if step < FIT_REL_TOL * k {
                if let Ok(params) = GammaParams::new(k, mean / k) {
                    return Ok(GammaFit {
                        params,
                        converged: true,
                        iterations: iter,
                    });
                }
                break;
            }
        }
    }
    log::warn!("gamma MLE did not converge; using method-of-moments estimate");
    Ok(GammaFit {
        params: mom,
        converged: false,
        iterations: FIT_MAX_ITER,
    })
}
