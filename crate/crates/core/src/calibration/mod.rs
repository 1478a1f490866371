//! Calibration: split the in-distribution data, average the composed vectors
//! of one half into `omega_mean`, fit a Gamma distribution to the distances
//! of the other half and place the threshold at the requested quantile.

mod gamma;
mod model;
pub mod special;

pub use gamma::{
    fit_gamma, gamma_cdf, gamma_pdf, gamma_quantile, moments_estimate, GammaFit, GammaParams,
    MIN_FIT_SAMPLES,
};
pub use model::{read_model, write_model, DetectorModel, Provenance};

use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result, StageExt};
use crate::recipe::Recipe;
use crate::representation::{cosine_similarity, EmbeddingInputs};
use crate::rng::SplitMix64;

/// Floor on distances; the Gamma support excludes zero.
pub const MIN_DISTANCE: f64 = 1e-12;
pub const DEFAULT_SPLIT: f64 = 0.5;
pub const DEFAULT_CONFIDENCE: f64 = 0.9;

/// Row indices of the two calibration halves: the first
/// `floor(fraction * count)` entries of a seeded shuffle, then the rest.
pub fn split_indices(count: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} is outside (0, 1)")));
    }
    if count < 4 {
        return Err(Error::InsufficientData(format!(
            "calibration split needs at least 4 rows, got {count}"
        )));
    }
    let mut order = SplitMix64::new(seed).permutation(count);
    let n_v = (fraction * count as f64).floor() as usize;
    if n_v < 2 || count - n_v < 2 {
        return Err(Error::InsufficientData(format!(
            "split of {count} rows at {fraction} leaves {n_v} and {} rows; both need at least 2",
            count - n_v
        )));
    }
    let rest = order.split_off(n_v);
    Ok((order, rest))
}

pub fn split_id(set: &EmbeddingSet, fraction: f64, seed: u64) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let (v, f) = split_indices(set.count(), fraction, seed)?;
    Ok((set.select(&v), set.select(&f)))
}

pub fn mean_vector<V: AsRef<[f64]>>(omegas: &[V]) -> Result<Vec<f64>> {
    let first = omegas
        .first()
        .ok_or_else(|| Error::InsufficientData("mean of zero vectors".into()))?;
    let mut acc = vec![0.0; first.as_ref().len()];
    for (i, w) in omegas.iter().enumerate() {
        let w = w.as_ref();
        if w.len() != acc.len() {
            return Err(Error::Dimension(format!(
                "vector {i} has length {}, expected {}",
                w.len(),
                acc.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(w) {
            *a += x;
        }
    }
    let n = omegas.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// `1 - cos(omega, omega_mean)`, clamped to `[MIN_DISTANCE, 2]`.
pub fn distance(omega: &[f64], omega_mean: &[f64]) -> Result<f64> {
    let cos = cosine_similarity(omega, omega_mean)?;
    Ok((1.0 - cos).clamp(MIN_DISTANCE, 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub recipe: Recipe,
    pub confidence: f64,
    pub fraction: f64,
    pub seed: u64,
    /// Recorded in the model's provenance.
    pub encoder: String,
}

impl CalibrationConfig {
    pub fn new(recipe: Recipe) -> Self {
        Self {
            recipe,
            confidence: DEFAULT_CONFIDENCE,
            fraction: DEFAULT_SPLIT,
            seed: 0,
            encoder: String::new(),
        }
    }
}

/// Runs the whole calibration pipeline over the in-distribution inputs.
pub fn calibrate(inputs: &EmbeddingInputs<'_>, config: &CalibrationConfig) -> Result<DetectorModel> {
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(Error::Config(format!(
            "confidence {} is outside (0, 1)",
            config.confidence
        )));
    }
    let bound = inputs.bind(&config.recipe).stage("inputs")?;
    let (yv, yf) = split_indices(bound.count(), config.fraction, config.seed).stage("split")?;

    let omegas_v = yv
        .iter()
        .map(|&i| bound.omega(i).map(|w| w.values))
        .collect::<Result<Vec<_>>>()
        .stage("compose")?;
    let omega_mean = mean_vector(&omegas_v).stage("mean")?;

    let distances = yf
        .iter()
        .map(|&i| bound.omega(i).and_then(|w| distance(&w.values, &omega_mean)))
        .collect::<Result<Vec<_>>>()
        .stage("distance")?;

    let fit = fit_gamma(&distances).stage("fit")?;
    if !fit.converged {
        log::warn!("falling back to method-of-moments gamma parameters");
    }
    let threshold = gamma_quantile(&fit.params, config.confidence).stage("threshold")?;

    Ok(DetectorModel {
        recipe: config.recipe.clone(),
        dim: omega_mean.len(),
        omega_mean,
        gamma: fit.params,
        confidence: config.confidence,
        threshold,
        provenance: Provenance {
            seed: config.seed,
            n_v: yv.len(),
            n_f: yf.len(),
            encoder: config.encoder.clone(),
        },
    })
}
