//! The calibrated detector and its JSON file.
//!
//! Floats are written with 17 significant digits so the file reproduces the
//! in-memory values exactly and identical models produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::gamma::{gamma_cdf, GammaParams};
use crate::error::{Error, Result};
use crate::recipe::{parse_recipe, Recipe};

const INVARIANT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_v: usize,
    pub n_f: usize,
    pub encoder: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub recipe: Recipe,
    pub omega_mean: Vec<f64>,
    pub gamma: GammaParams,
    pub confidence: f64,
    pub threshold: f64,
    pub dim: usize,
    pub provenance: Provenance,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GammaDoc {
    shape: f64,
    scale: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    recipe: String,
    omega_mean: Vec<f64>,
    gamma: GammaDoc,
    confidence: f64,
    threshold: f64,
    dim: usize,
    provenance: Provenance,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl DetectorModel {
    /// Checks the invariants a loaded model must satisfy.
    pub fn validate(&self) -> Result<()> {
        if self.omega_mean.len() != self.dim || self.dim == 0 {
            return Err(Error::Validation(format!(
                "omega_mean has {} entries but dim is {}",
                self.omega_mean.len(),
                self.dim
            )));
        }
        if self.omega_mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("omega_mean has non-finite entries".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Validation(format!(
                "confidence {} is outside (0, 1)",
                self.confidence
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Validation(format!(
                "threshold {} is not a positive number",
                self.threshold
            )));
        }
        let cdf = gamma_cdf(&self.gamma, self.threshold);
        if (cdf - self.confidence).abs() > INVARIANT_TOL {
            return Err(Error::Validation(format!(
                "threshold {} sits at gamma cdf {cdf}, expected confidence {}",
                self.threshold, self.confidence
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"recipe\": {},", serde_json::Value::from(self.recipe.render()));
        s.push_str("  \"omega_mean\": [");
        for (i, x) in self.omega_mean.iter().enumerate() {
            s.push_str(if i == 0 { "\n    " } else { ",\n    " });
            s.push_str(&num(*x));
        }
        s.push_str(if self.omega_mean.is_empty() { "],\n" } else { "\n  ],\n" });
        let _ = writeln!(
            s,
            "  \"gamma\": {{\n    \"shape\": {},\n    \"scale\": {}\n  }},",
            num(self.gamma.shape()),
            num(self.gamma.scale())
        );
        let _ = writeln!(s, "  \"confidence\": {},", num(self.confidence));
        let _ = writeln!(s, "  \"threshold\": {},", num(self.threshold));
        let _ = writeln!(s, "  \"dim\": {},", self.dim);
        let p = &self.provenance;
        let _ = writeln!(
            s,
            "  \"provenance\": {{\n    \"seed\": {},\n    \"n_v\": {},\n    \"n_f\": {},\n    \"encoder\": {}\n  }}",
            p.seed,
            p.n_v,
            p.n_f,
            serde_json::Value::from(p.encoder.as_str())
        );
        s.push_str("}\n");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        let recipe = parse_recipe(&doc.recipe)
            .map_err(|e| Error::Format(format!("model recipe {:?}: {e}", doc.recipe)))?;
        let gamma = GammaParams::new(doc.gamma.shape, doc.gamma.scale)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let model = DetectorModel {
            recipe,
            omega_mean: doc.omega_mean,
            gamma,
            confidence: doc.confidence,
            threshold: doc.threshold,
            dim: doc.dim,
            provenance: doc.provenance,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn write_model(model: &DetectorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<DetectorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DetectorModel::from_json(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::gamma_quantile;
    use proptest::prelude::*;

    fn model(omega_mean: Vec<f64>, shape: f64, scale: f64) -> DetectorModel {
        let gamma = GammaParams::new(shape, scale).unwrap();
        DetectorModel {
            recipe: parse_recipe("(pi,3v)").unwrap(),
            dim: omega_mean.len(),
            omega_mean,
            gamma,
            confidence: 0.9,
            threshold: gamma_quantile(&gamma, 0.9).unwrap(),
            provenance: Provenance {
                seed: u64::MAX,
                n_v: 10,
                n_f: 12,
                encoder: "resnet50 \"v2\"".into(),
            },
        }
    }

    #[test]
    fn json_layout() {
        let m = model(vec![0.1, -2.5], 2.0, 0.01);
        let text = m.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["recipe"], "(pi,3v)");
        assert_eq!(v["dim"], 2);
        assert_eq!(v["provenance"]["seed"], u64::MAX);
        assert_eq!(v["provenance"]["encoder"], "resnet50 \"v2\"");
        assert!(text.contains("1.0000000000000001e-1"));
        assert!(text.contains("\"shape\": 2.0000000000000000e0"));
    }

    #[test]
    fn rejects_corrupt_documents() {
        let good = model(vec![1.0, 2.0], 3.0, 0.2).to_json();
        assert!(matches!(DetectorModel::from_json("{"), Err(Error::Format(_))));
        assert!(matches!(
            DetectorModel::from_json(&good.replace("(pi,3v)", "(pi,)")),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            DetectorModel::from_json(&good.replace("\"dim\": 2", "\"dim\": 3")),
            Err(Error::Validation(_))
        ));
        let v: serde_json::Value = serde_json::from_str(&good).unwrap();
        let mut bad = v.clone();
        bad["threshold"] = serde_json::json!(123.0);
        assert!(matches!(
            DetectorModel::from_json(&bad.to_string()),
            Err(Error::Validation(_))
        ));
        let mut bad = v;
        bad["gamma"]["shape"] = serde_json::json!(-1.0);
        assert!(DetectorModel::from_json(&bad.to_string()).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(
            mean in prop::collection::vec(-1e6f64..1e6, 1..20),
            shape in 0.2f64..40.0,
            scale in 1e-4f64..10.0,
        ) {
            let m = model(mean, shape, scale);
            let text = m.to_json();
            let back = DetectorModel::from_json(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_json(), text);
        }
    }
}
