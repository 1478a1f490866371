//! Language-similarity features and composition of the working vector.

use crate::embedding_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::recipe::{Block, Recipe, Term, TermKind};

const CLAMP_SLACK: f64 = 1e-9;

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension("cosine of empty vectors".into()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm operand in cosine similarity".into()));
    }
    let cos = dot / (na.sqrt() * nb.sqrt());
    if !cos.is_finite() {
        return Err(Error::Degenerate("cosine similarity is not finite".into()));
    }
    Ok(cos.clamp(-1.0, 1.0))
}

/// Similarities of one CLIP image embedding to the normal (`pi`) and
/// anomalous (`pibar`) prompt embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LanguageFeatures {
    pi: Vec<f64>,
    pibar: Vec<f64>,
}

impl LanguageFeatures {
    /// Entries outside [-1, 1] by more than float rounding are rejected;
    /// the rest are clamped.
    pub fn new(pi: Vec<f64>, pibar: Vec<f64>) -> Result<Self> {
        let clamp = |v: Vec<f64>, name: &str| -> Result<Vec<f64>> {
            v.into_iter()
                .map(|x| {
                    if x.is_finite() && (-1.0 - CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&x) {
                        Ok(x.clamp(-1.0, 1.0))
                    } else {
                        Err(Error::Data(format!("{name} entry {x} is not a cosine similarity")))
                    }
                })
                .collect()
        };
        Ok(Self {
            pi: clamp(pi, "pi")?,
            pibar: clamp(pibar, "pibar")?,
        })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn pibar(&self) -> &[f64] {
        &self.pibar
    }
}

fn similarities(q: &[f64], prompts: &EmbeddingSet, which: &str) -> Result<Vec<f64>> {
    if prompts.is_empty() {
        return Ok(Vec::new());
    }
    if prompts.dim() != q.len() {
        return Err(Error::Dimension(format!(
            "image embedding has dim {}, {which} prompts have dim {}",
            q.len(),
            prompts.dim()
        )));
    }
    (0..prompts.count())
        .map(|j| {
            cosine_similarity(q, &prompts.row_f64(j)).map_err(|e| match e {
                Error::Degenerate(_) => {
                    Error::Degenerate(format!("{which} prompt {j} or the image embedding has zero norm"))
                }
                other => other,
            })
        })
        .collect()
}

/// `pi[j] = cos(q, normal[j])`, `pibar[j] = cos(q, anomalous[j])`.
/// Empty prompt sets yield empty blocks.
pub fn language_features(
    image_embedding: &[f64],
    normal_prompts: &EmbeddingSet,
    anomalous_prompts: &EmbeddingSet,
) -> Result<LanguageFeatures> {
    let pi = similarities(image_embedding, normal_prompts, "normal")?;
    let pibar = similarities(image_embedding, anomalous_prompts, "anomalous")?;
    LanguageFeatures::new(pi, pibar)
}

/// Composed working vector together with the recipe that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaVector {
    pub values: Vec<f64>,
    pub recipe: Recipe,
}

impl OmegaVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct Bases<'a> {
    v: Option<&'a [f64]>,
    feats: &'a LanguageFeatures,
}

impl Bases<'_> {
    fn base(&self, kind: TermKind) -> Result<&[f64]> {
        let base = match kind {
            TermKind::V => self
                .v
                .ok_or_else(|| Error::Config("recipe uses 'v' but no latent was supplied".into()))?,
            TermKind::Pi => self.feats.pi(),
            TermKind::PiBar => self.feats.pibar(),
        };
        if base.is_empty() {
            return Err(Error::Config(format!(
                "recipe uses '{}' but it is empty",
                kind.name()
            )));
        }
        Ok(base)
    }

    fn term(&self, t: &Term, out: &mut Vec<f64>) -> Result<()> {
        let base = self.base(t.kind)?;
        for _ in 0..t.factor() {
            out.extend_from_slice(base);
        }
        Ok(())
    }

    /// Each child is tiled cyclically to the longest child, then summed.
    fn sum(&self, terms: &[Term], out: &mut Vec<f64>) -> Result<()> {
        let mut parts = Vec::with_capacity(terms.len());
        for t in terms {
            let mut part = Vec::new();
            self.term(t, &mut part)?;
            parts.push(part);
        }
        let len = parts.iter().map(Vec::len).max().unwrap_or(0);
        out.extend((0..len).map(|i| parts.iter().map(|p| p[i % p.len()]).sum::<f64>()));
        Ok(())
    }
}

pub fn compose(recipe: &Recipe, v: Option<&[f64]>, feats: &LanguageFeatures) -> Result<OmegaVector> {
    let bases = Bases { v, feats };
    let mut values = Vec::new();
    match recipe {
        Recipe::Term(t) => bases.term(t, &mut values)?,
        Recipe::Add(ts) => bases.sum(ts, &mut values)?,
        Recipe::Append(blocks) => {
            for b in blocks {
                match b {
                    Block::Term(t) => bases.term(t, &mut values)?,
                    Block::Add(ts) => bases.sum(ts, &mut values)?,
                }
            }
        }
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("composed vector has non-finite entries".into()));
    }
    Ok(OmegaVector {
        values,
        recipe: recipe.clone(),
    })
}

/// The embedding sets a recipe draws from. Latent and CLIP-image rows are
/// aligned by index; when only one of the two is supplied it serves as both.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddingInputs<'a> {
    pub latents: Option<&'a EmbeddingSet>,
    pub clip_images: Option<&'a EmbeddingSet>,
    pub normal_prompts: Option<&'a EmbeddingSet>,
    pub anomalous_prompts: Option<&'a EmbeddingSet>,
}

/// [`EmbeddingInputs`] checked against one recipe.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    recipe: &'a Recipe,
    latents: Option<&'a EmbeddingSet>,
    images: Option<&'a EmbeddingSet>,
    normal: &'a EmbeddingSet,
    anomalous: &'a EmbeddingSet,
    count: usize,
}

fn empty_set() -> &'static EmbeddingSet {
    static EMPTY: std::sync::OnceLock<EmbeddingSet> = std::sync::OnceLock::new();
    EMPTY.get_or_init(|| EmbeddingSet::empty(1).expect("dim 1 is valid"))
}

impl<'a> EmbeddingInputs<'a> {
    /// Verifies that every set the recipe needs is present and that the
    /// image-side sets agree on row count.
    pub fn bind(&self, recipe: &'a Recipe) -> Result<BoundInputs<'a>> {
        let latents = self.latents.or(self.clip_images);
        let images = self.clip_images.or(self.latents);
        let needs_v = recipe.uses(TermKind::V);
        let needs_pi = recipe.uses(TermKind::Pi);
        let needs_pibar = recipe.uses(TermKind::PiBar);

        if needs_v && latents.is_none() {
            return Err(Error::Config(format!(
                "recipe '{recipe}' needs latent embeddings"
            )));
        }
        if (needs_pi || needs_pibar) && images.is_none() {
            return Err(Error::Config(format!(
                "recipe '{recipe}' needs CLIP image embeddings"
            )));
        }
        let prompts = |set: Option<&'a EmbeddingSet>, needed: bool, which: &str| {
            match set {
                Some(s) if needed && s.is_empty() => Err(Error::Config(format!(
                    "recipe '{recipe}' needs {which} prompts but the prompt set is empty"
                ))),
                Some(s) if needed => Ok(s),
                None if needed => Err(Error::Config(format!(
                    "recipe '{recipe}' needs {which} prompt embeddings"
                ))),
                _ => Ok(empty_set()),
            }
        };
        let normal = prompts(self.normal_prompts, needs_pi, "normal")?;
        let anomalous = prompts(self.anomalous_prompts, needs_pibar, "anomalous")?;

        let latents = if needs_v { latents } else { None };
        let images = if needs_pi || needs_pibar { images } else { None };
        let count = match (latents, images) {
            (Some(l), Some(i)) if l.count() != i.count() => {
                return Err(Error::Alignment(format!(
                    "latent set has {} rows, CLIP image set has {}",
                    l.count(),
                    i.count()
                )))
            }
            (Some(l), _) => l.count(),
            (None, Some(i)) => i.count(),
            (None, None) => 0,
        };
        Ok(BoundInputs {
            recipe,
            latents,
            images,
            normal,
            anomalous,
            count,
        })
    }
}

impl<'a> BoundInputs<'a> {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn recipe(&self) -> &'a Recipe {
        self.recipe
    }

    /// Composed vector for row `i`.
    pub fn omega(&self, i: usize) -> Result<OmegaVector> {
        let v = self.latents.map(|s| s.row_f64(i));
        let feats = match self.images {
            Some(images) => language_features(&images.row_f64(i), self.normal, self.anomalous)?,
            None => LanguageFeatures::none(),
        };
        compose(self.recipe, v.as_deref(), &feats)
    }
}
