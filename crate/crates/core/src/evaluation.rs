//! Labeled test mixes, confusion counts, and per-corruption report tables.
//!
//! The positive class is `ood` throughout. Reports hold one row per model
//! and one column per corruption type, plus the row mean and population
//! standard deviation over the cells that have a value.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::calibration::DetectorModel;
use crate::detection::{classify, Verdict};
use crate::embedding_io::{read_embedding_file, DatasetManifest, EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::recipe::TermKind;
use crate::representation::{BoundInputs, EmbeddingInputs};
use crate::rng::SplitMix64;

/// Column order of report tables.
pub const OOD_TYPES: [&str; 10] = [
    "rain", "snow", "night", "bright", "fog", "contrast", "defocus", "gauss", "glass", "motion",
];

/// Encoder name the manifest uses for CLIP image embeddings.
pub const CLIP_IMAGE_ENCODER: &str = "clip-image";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Id,
    Ood,
}

/// `(label, row)` pairs: `min(n_id, n_ood)` rows drawn without replacement
/// from each side by a seeded shuffle, interleaved id, ood, id, ood, ...
pub fn mix_plan(n_id: usize, n_ood: usize, seed: u64) -> Vec<(Label, usize)> {
    let m = n_id.min(n_ood);
    let mut rng = SplitMix64::new(seed);
    let ids = rng.permutation(n_id);
    let oods = rng.permutation(n_ood);
    ids.into_iter()
        .take(m)
        .zip(oods.into_iter().take(m))
        .flat_map(|(i, o)| [(Label::Id, i), (Label::Ood, o)])
        .collect()
}

/// 1:1 mix of in- and out-of-distribution rows with aligned labels.
pub fn build_test_mix(id_set: &EmbeddingSet, ood_set: &EmbeddingSet, seed: u64) -> Result<(EmbeddingSet, Vec<Label>)> {
    if id_set.dim() != ood_set.dim() {
        return Err(Error::Dimension(format!(
            "id set has dim {}, ood set has dim {}",
            id_set.dim(),
            ood_set.dim()
        )));
    }
    if id_set.is_empty() || ood_set.is_empty() {
        return Err(Error::InsufficientData("test mix needs rows on both sides".into()));
    }
    let plan = mix_plan(id_set.count(), ood_set.count(), seed);
    let mut data = Vec::with_capacity(plan.len() * id_set.dim());
    let mut labels = Vec::with_capacity(plan.len());
    for (label, row) in plan {
        let src = match label {
            Label::Id => id_set,
            Label::Ood => ood_set,
        };
        data.extend_from_slice(src.row(row));
        labels.push(label);
    }
    let mix = EmbeddingSet::new(id_set.dim(), data, Default::default())?;
    Ok((mix, labels))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, label: Label, verdict: Verdict) {
        match (label, verdict) {
            (Label::Ood, Verdict::Ood) => self.tp += 1,
            (Label::Id, Verdict::Ood) => self.fp += 1,
            (Label::Id, Verdict::Normal) => self.tn += 1,
            (Label::Ood, Verdict::Normal) => self.fn_ += 1,
        }
    }
}

pub fn confusion(labels: &[Label], verdicts: &[Verdict]) -> Result<ConfusionMatrix> {
    if labels.len() != verdicts.len() {
        return Err(Error::Alignment(format!(
            "{} labels against {} verdicts",
            labels.len(),
            verdicts.len()
        )));
    }
    let mut c = ConfusionMatrix::default();
    for (&l, &v) in labels.iter().zip(verdicts) {
        c.record(l, v);
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`; `None` when nothing is positive on either side.
pub fn f1(c: &ConfusionMatrix) -> Option<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    (denom > 0).then(|| 2.0 * c.tp as f64 / denom as f64)
}

pub fn accuracy(c: &ConfusionMatrix) -> Option<f64> {
    let total = c.total();
    (total > 0).then(|| (c.tp + c.tn) as f64 / total as f64)
}

pub fn fpr(c: &ConfusionMatrix) -> Option<f64> {
    let negatives = c.fp + c.tn;
    (negatives > 0).then(|| c.fp as f64 / negatives as f64)
}

/// Mean and population standard deviation.
pub fn aggregate_row(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InsufficientData("aggregate of an empty row".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    F1,
    Accuracy,
    Fpr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::F1, Metric::Accuracy, Metric::Fpr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
            Metric::Fpr => "fpr",
        }
    }

    /// Value in percent, `None` when undefined.
    pub fn percent(self, c: &ConfusionMatrix) -> Option<f64> {
        let v = match self {
            Metric::F1 => f1(c),
            Metric::Accuracy => accuracy(c),
            Metric::Fpr => fpr(c),
        };
        v.map(|x| 100.0 * x)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Metric::F1),
            "accuracy" => Ok(Metric::Accuracy),
            "fpr" => Ok(Metric::Fpr),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    /// Cells with a value; absent or undefined cells are missing.
    pub per_type: BTreeMap<String, f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl ReportRow {
    /// Builds a row whose mean and std cover exactly the present cells.
    pub fn new(label: impl Into<String>, per_type: BTreeMap<String, f64>) -> Self {
        let values: Vec<f64> = per_type.values().copied().collect();
        let (mean, std) = match aggregate_row(&values) {
            Ok((m, s)) => (Some(m), Some(s)),
            Err(_) => (None, None),
        };
        Self {
            label: label.into(),
            per_type,
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub metric: Metric,
    /// Column order.
    pub ood_types: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn empty(metric: Metric) -> Self {
        Self {
            metric,
            ood_types: OOD_TYPES.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

fn header(report: &EvaluationReport) -> Vec<String> {
    let mut h = vec!["label".to_string()];
    h.extend(report.ood_types.iter().cloned());
    h.push("mean".into());
    h.push("std".into());
    h
}

pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_csv(report: &EvaluationReport) -> String {
    let full = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    w.write_record(header(report)).expect("in-memory csv");
    for row in &report.rows {
        let mut rec = vec![row.label.clone()];
        rec.extend(report.ood_types.iter().map(|t| full(row.per_type.get(t).copied())));
        rec.push(full(row.mean));
        rec.push(full(row.std));
        w.write_record(rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

fn render_markdown(report: &EvaluationReport) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
    let h = header(report);
    let mut out = format!("| {} |\n", h.join(" | "));
    out.push_str("|---");
    out.push_str(&"|---:".repeat(h.len() - 1));
    out.push_str("|\n");
    for row in &report.rows {
        let mut cells = vec![row.label.replace('|', "\\|")];
        cells.extend(report.ood_types.iter().map(|t| cell(row.per_type.get(t).copied())));
        cells.push(cell(row.mean));
        cells.push(cell(row.std));
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

/// Reads back a CSV produced by [`render_report`].
pub fn parse_report_csv(text: &str, metric: Metric) -> Result<EvaluationReport> {
    let bad = |m: String| Error::Format(format!("report csv: {m}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let head: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if head.len() < 3 || head[0] != "label" || head[head.len() - 2] != "mean" || head[head.len() - 1] != "std" {
        return Err(bad(format!("unexpected header {head:?}")));
    }
    let ood_types = head[1..head.len() - 2].to_vec();
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut per_type = BTreeMap::new();
        for (t, v) in ood_types.iter().zip(rec.iter().skip(1)) {
            if let Some(x) = num(v)? {
                per_type.insert(t.clone(), x);
            }
        }
        rows.push(ReportRow {
            label: rec[0].to_string(),
            per_type,
            mean: num(&rec[head.len() - 2])?,
            std: num(&rec[head.len() - 1])?,
        });
    }
    Ok(EvaluationReport {
        metric,
        ood_types,
        rows,
    })
}

/// Confusion counts for every (model, corruption type) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    pub ood_types: Vec<String>,
    pub rows: Vec<GridRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub label: String,
    /// Aligned with `ood_types`; `None` where the data is absent.
    pub cells: Vec<Option<ConfusionMatrix>>,
}

impl EvaluationGrid {
    pub fn report(&self, metric: Metric) -> EvaluationReport {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let per_type = self
                    .ood_types
                    .iter()
                    .zip(&row.cells)
                    .filter_map(|(t, c)| Some((t.clone(), metric.percent(c.as_ref()?)?)))
                    .collect();
                ReportRow::new(row.label.clone(), per_type)
            })
            .collect();
        EvaluationReport {
            metric,
            ood_types: self.ood_types.clone(),
            rows,
        }
    }
}

pub fn model_label(model: &DetectorModel) -> String {
    if model.provenance.encoder.is_empty() {
        model.recipe.render()
    } else {
        format!("{} {}", model.provenance.encoder, model.recipe)
    }
}

/// Canonical corruption types followed by any others the manifest lists.
pub fn report_columns(manifest: &DatasetManifest) -> Vec<String> {
    let mut cols: Vec<String> = OOD_TYPES.iter().map(|s| s.to_string()).collect();
    for t in manifest.ood_types() {
        if !cols.iter().any(|c| c == t) {
            cols.push(t.to_string());
        }
    }
    cols
}

struct Loader<'m> {
    manifest: &'m DatasetManifest,
    cache: HashMap<PathBuf, EmbeddingSet>,
}

impl Loader<'_> {
    fn load(&mut self, path: &Path) -> Result<PathBuf> {
        let full = self.manifest.resolve(path);
        if !self.cache.contains_key(&full) {
            let set = read_embedding_file(&full)?;
            self.cache.insert(full.clone(), set);
        }
        Ok(full)
    }

    fn entry(&mut self, role: Role, ood_type: &str, encoder: &str) -> Result<Option<PathBuf>> {
        match self.manifest.find(role, ood_type, encoder) {
            Some(e) => {
                let path = e.path.clone();
                self.load(&path).map(Some)
            }
            None => Ok(None),
        }
    }
}

/// Paths of the image-side sets one side of a cell needs.
#[derive(Clone)]
struct Side {
    latents: Option<PathBuf>,
    images: Option<PathBuf>,
}

fn cell_confusion(
    model: &DetectorModel,
    id: &BoundInputs<'_>,
    ood: &BoundInputs<'_>,
    seed: u64,
) -> Result<ConfusionMatrix> {
    let mut c = ConfusionMatrix::default();
    for (label, row) in mix_plan(id.count(), ood.count(), seed) {
        let omega = match label {
            Label::Id => id.omega(row)?,
            Label::Ood => ood.omega(row)?,
        };
        if omega.len() != model.dim {
            return Err(Error::Dimension(format!(
                "composed vector has length {}, model expects {}",
                omega.len(),
                model.dim
            )));
        }
        let eps = crate::calibration::distance(&omega.values, &model.omega_mean)?;
        c.record(label, classify(model, eps));
    }
    Ok(c)
}

/// For every model and corruption type: mix the manifest's in-distribution
/// rows 1:1 with that type's rows, detect, and count. Missing corruption
/// files leave the cell absent with a warning.
pub fn evaluate_grid(manifest: &DatasetManifest, models: &[DetectorModel], seed: u64) -> Result<EvaluationGrid> {
    let ood_types = report_columns(manifest);
    let mut loader = Loader {
        manifest,
        cache: HashMap::new(),
    };

    let needs_prompts = |kind| models.iter().any(|m| m.recipe.uses(kind));
    let mut prompt = |path: &Option<PathBuf>, needed: bool, which: &str| -> Result<Option<PathBuf>> {
        match path {
            Some(p) if needed => loader.load(p).map(Some),
            None if needed => Err(Error::Config(format!(
                "a model needs {which} prompts but the manifest lists none"
            ))),
            _ => Ok(None),
        }
    };
    let normal_path = prompt(&manifest.prompt_files.normal, needs_prompts(TermKind::Pi), "normal")?;
    let anom_path = prompt(
        &manifest.prompt_files.anomalous,
        needs_prompts(TermKind::PiBar),
        "anomalous",
    )?;

    // Resolve and load every file up front so cells can run in parallel.
    let mut plans = Vec::with_capacity(models.len());
    for model in models {
        let needs_v = model.recipe.uses(TermKind::V);
        let needs_q = model.recipe.uses_language();
        let encoder = model.provenance.encoder.as_str();
        let mut side = |role: Role, t: &str| -> Result<Option<Side>> {
            let latents = if needs_v { loader.entry(role, t, encoder)? } else { None };
            let images = if needs_q {
                loader.entry(role, t, CLIP_IMAGE_ENCODER)?
            } else {
                None
            };
            if (needs_v && latents.is_none()) || (needs_q && images.is_none()) {
                return Ok(None);
            }
            Ok(Some(Side { latents, images }))
        };
        let id_side = side(Role::Id, "")?.ok_or_else(|| {
            Error::Data(format!(
                "manifest has no in-distribution entries for model '{}'",
                model_label(model)
            ))
        })?;
        let mut cells = Vec::with_capacity(ood_types.len());
        for t in &ood_types {
            let s = side(Role::Ood, t)?;
            if s.is_none() {
                log::warn!("no '{t}' data for model '{}'; cell left empty", model_label(model));
            }
            cells.push(s);
        }
        plans.push((id_side, cells));
    }

    let cache = &loader.cache;
    let normal = normal_path.as_ref().map(|p| &cache[p]);
    let anomalous = anom_path.as_ref().map(|p| &cache[p]);
    let inputs = |side: &Side| EmbeddingInputs {
        latents: side.latents.as_ref().map(|p| &cache[p]),
        clip_images: side.images.as_ref().map(|p| &cache[p]),
        normal_prompts: normal,
        anomalous_prompts: anomalous,
    };

    let rows = models
        .iter()
        .zip(&plans)
        .map(|(model, (id_side, cells))| {
            let id_inputs = inputs(id_side);
            let id = id_inputs.bind(&model.recipe)?;
            let cells = cells
                .par_iter()
                .map(|cell| match cell {
                    None => Ok(None),
                    Some(side) => {
                        let ood_inputs = inputs(side);
                        let ood = ood_inputs.bind(&model.recipe)?;
                        if ood.count() == 0 || id.count() == 0 {
                            return Ok(None);
                        }
                        cell_confusion(model, &id, &ood, seed).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GridRow {
                label: model_label(model),
                cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvaluationGrid { ood_types, rows })
}
