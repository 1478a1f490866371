//! Scoring and classifying samples against a calibrated model.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::calibration::{distance, DetectorModel};
use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::representation::{compose, EmbeddingInputs, LanguageFeatures, OmegaVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Normal,
    Ood,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Normal => "normal",
            Verdict::Ood => "ood",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub index: usize,
    pub epsilon: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

fn score_omega(model: &DetectorModel, omega: &OmegaVector) -> Result<f64> {
    if omega.len() != model.dim {
        return Err(Error::Dimension(format!(
            "composed vector has length {}, model expects {}",
            omega.len(),
            model.dim
        )));
    }
    distance(&omega.values, &model.omega_mean)
}

/// Distance of the composed sample from the model's mean vector.
pub fn score(model: &DetectorModel, v: Option<&[f64]>, feats: &LanguageFeatures) -> Result<f64> {
    score_omega(model, &compose(&model.recipe, v, feats)?)
}

/// Out-of-distribution iff `epsilon` is strictly above the threshold.
pub fn classify(model: &DetectorModel, epsilon: f64) -> Verdict {
    if epsilon > model.threshold {
        Verdict::Ood
    } else {
        Verdict::Normal
    }
}

/// Scores every row of the inputs. Rows may be processed in parallel;
/// results come back in input order.
pub fn detect_inputs(model: &DetectorModel, inputs: &EmbeddingInputs<'_>) -> Result<Vec<DetectionResult>> {
    let bound = inputs.bind(&model.recipe)?;
    (0..bound.count())
        .into_par_iter()
        .map(|index| {
            let epsilon = score_omega(model, &bound.omega(index)?)?;
            Ok(DetectionResult {
                index,
                epsilon,
                threshold: model.threshold,
                verdict: classify(model, epsilon),
            })
        })
        .collect()
}

pub fn batch_detect(
    model: &DetectorModel,
    latents: Option<&EmbeddingSet>,
    clip_images: Option<&EmbeddingSet>,
    normal_prompts: Option<&EmbeddingSet>,
    anomalous_prompts: Option<&EmbeddingSet>,
) -> Result<Vec<DetectionResult>> {
    detect_inputs(
        model,
        &EmbeddingInputs {
            latents,
            clip_images,
            normal_prompts,
            anomalous_prompts,
        },
    )
}

/// `index,epsilon,threshold,verdict`, epsilon to 9 significant digits.
pub fn write_detection_csv<W: Write>(results: &[DetectionResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("writing detection csv: {e}"));
    w.write_record(["index", "epsilon", "threshold", "verdict"])
        .map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.index.to_string(),
            format!("{:.8e}", r.epsilon),
            format!("{:.16e}", r.threshold),
            r.verdict.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing detection csv: {e}")))
}
