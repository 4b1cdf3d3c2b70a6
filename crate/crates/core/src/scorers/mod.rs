//! Scorers: turn candidates into objective values.
//!
//! Four kinds are supported. Embedding similarity and preference scoring go
//! through backends; lexical overlap and the Gram style/content distances
//! are computed here (the latter from backend feature maps).

mod gram;
mod lexical;

use std::collections::HashMap;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

pub use gram::{content_distance, gram_matrix, style_distance, FeatureMap, Gram};
pub use lexical::{lexical_score, lexical_similarity};

use crate::backends::{parallel_map, CallMeter, ContentHash, EmbedBackend, FeatureBackend, MediaHandle, PreferenceBackend, Registry};
use crate::candidate::{Candidate, Direction, Objective, ScoreValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    EmbeddingSimilarity,
    PreferenceService,
    Lexical,
    GramStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Style,
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_id: String,
    pub role: LayerRole,
}

/// How candidates are scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub backend: Option<String>,
    pub direction: Direction,
    pub objective_names: Vec<String>,
    pub weights: Vec<f64>,
    pub style_target: Option<MediaHandle>,
    pub content_target: Option<MediaHandle>,
    pub layers: Vec<LayerSpec>,
    /// Reference text for the lexical scorer.
    pub reference: Option<String>,
    /// Frame-count hint passed with video embeddings.
    pub frames: Option<u32>,
}

impl ScorerSpec {
    /// A spec with the kind's default objective names and unit weights.
    pub fn new(kind: ScorerKind) -> Self {
        let objective_names: Vec<String> = default_objectives(kind).iter().map(|s| s.to_string()).collect();
        Self {
            kind,
            backend: None,
            direction: Direction::Maximize,
            weights: vec![1.0; objective_names.len()],
            objective_names,
            style_target: None,
            content_target: None,
            layers: Vec::new(),
            reference: None,
            frames: None,
        }
    }

    pub fn lexical(reference: impl Into<String>) -> Self {
        Self {
            reference: Some(reference.into()),
            ..Self::new(ScorerKind::Lexical)
        }
    }

    pub fn with_backend(mut self, backend: impl Into<String>) -> Self {
        self.backend = Some(backend.into());
        self
    }

    pub fn is_multi_objective(&self) -> bool {
        self.objective_names.len() > 1
    }

    pub fn validate(&self) -> Result<()> {
        let expected = default_objectives(self.kind).len();
        if self.objective_names.len() != expected {
            return Err(Error::config(
                "scorer.objective_names",
                format!("{:?} scorers produce {expected} objective(s)", self.kind),
            ));
        }
        if self.weights.len() != self.objective_names.len() {
            return Err(Error::config(
                "scorer.weights",
                format!(
                    "{} weights for {} objectives",
                    self.weights.len(),
                    self.objective_names.len()
                ),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) || self.weights.iter().all(|w| *w == 0.0) {
            return Err(Error::config("scorer.weights", "weights must be non-negative and not all zero"));
        }
        match self.kind {
            ScorerKind::Lexical => {
                if self.reference.is_none() {
                    return Err(Error::config("scorer.reference", "lexical scorer needs a reference text"));
                }
            }
            ScorerKind::EmbeddingSimilarity | ScorerKind::PreferenceService => {
                if self.backend.is_none() {
                    return Err(Error::config("scorer.backend", "this scorer needs a backend"));
                }
            }
            ScorerKind::GramStyle => {
                if self.backend.is_none() {
                    return Err(Error::config("scorer.backend", "this scorer needs a backend"));
                }
                if self.style_target.is_none() {
                    return Err(Error::config("scorer.style_target", "gram_style scorer needs a style target"));
                }
                if self.content_target.is_none() {
                    return Err(Error::config("scorer.content_target", "gram_style scorer needs a content target"));
                }
                for role in [LayerRole::Style, LayerRole::Content] {
                    if !self.layers.iter().any(|l| l.role == role) {
                        return Err(Error::config(
                            "scorer.layers",
                            format!("gram_style scorer needs at least one {role:?} layer"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn layer_ids(&self, role: LayerRole) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.role == role)
            .map(|l| l.layer_id.clone())
            .collect()
    }
}

pub fn default_objectives(kind: ScorerKind) -> &'static [&'static str] {
    match kind {
        ScorerKind::EmbeddingSimilarity => &["similarity"],
        ScorerKind::PreferenceService => &["preference"],
        ScorerKind::Lexical => &["lexical"],
        ScorerKind::GramStyle => &["style", "content"],
    }
}

/// Scores already computed in this run, keyed by text and media.
#[derive(Debug, Default)]
pub struct ScoreMemo {
    entries: DashMap<(String, Option<ContentHash>), ScoreValue>,
}

impl ScoreMemo {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn memo_key(c: &Candidate) -> (String, Option<ContentHash>) {
    (c.normalized_key().to_string(), c.media.as_ref().map(|m| m.content_hash))
}

/// Everything a scorer may need besides the candidates.
pub struct ScoreContext<'a> {
    pub registry: &'a Registry,
    pub test_sample: Option<&'a MediaHandle>,
    pub init_description: Option<&'a str>,
    pub meter: &'a CallMeter,
    pub memo: &'a ScoreMemo,
    pub max_in_flight: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    dot.clamp(-1.0, 1.0)
}

/// Cosine similarity between the test sample's embedding and each text's.
pub fn embedding_similarity_score(
    backend: &dyn EmbedBackend,
    test_sample: &MediaHandle,
    texts: &[String],
    frames: Option<u32>,
    meter: &CallMeter,
) -> Result<Vec<f64>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let target = backend.embed_media(test_sample, frames, meter)?;
    let vectors = backend.embed_texts(texts, meter)?;
    if vectors.len() != texts.len() {
        return Err(Error::scoring(
            None,
            format!("backend returned {} embeddings for {} texts", vectors.len(), texts.len()),
        ));
    }
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != target.len() {
                return Err(Error::scoring(
                    Some(i),
                    format!("text embedding has dimension {}, media has {}", v.len(), target.len()),
                ));
            }
            Ok(cosine(v, &target))
        })
        .collect()
}

/// Preference of each candidate image for the original prompt.
pub fn preference_score(
    backend: &dyn PreferenceBackend,
    init_description: &str,
    candidates: &[Candidate],
    meter: &CallMeter,
) -> Result<Vec<f64>> {
    let images = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.media
                .clone()
                .ok_or_else(|| Error::Contract(format!("candidate {i} has no image to score")))
        })
        .collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let scores = backend.preference_scores(init_description, &images, meter)?;
    if scores.len() != images.len() {
        return Err(Error::scoring(
            None,
            format!("backend returned {} scores for {} images", scores.len(), images.len()),
        ));
    }
    Ok(scores)
}

fn fetch_layers(
    backend: &dyn FeatureBackend,
    image: &MediaHandle,
    ids: &[String],
    meter: &CallMeter,
) -> Result<HashMap<String, FeatureMap>> {
    let maps = backend.extract_features(image, ids, meter)?;
    let by_id: HashMap<String, FeatureMap> = maps.into_iter().map(|m| (m.layer_id().to_string(), m)).collect();
    for id in ids {
        if !by_id.contains_key(id) {
            return Err(Error::scoring(None, format!("layer `{id}` absent from backend response")));
        }
    }
    Ok(by_id)
}

/// `(style, content)` distances per candidate image; both lower-is-better.
pub fn gram_style_score(
    backend: &dyn FeatureBackend,
    candidates: &[Candidate],
    spec: &ScorerSpec,
    meter: &CallMeter,
    max_in_flight: usize,
) -> Result<Vec<(f64, f64)>> {
    let style_target = spec
        .style_target
        .as_ref()
        .ok_or_else(|| Error::config("scorer.style_target", "missing"))?;
    let content_target = spec
        .content_target
        .as_ref()
        .ok_or_else(|| Error::config("scorer.content_target", "missing"))?;
    let style_ids = spec.layer_ids(LayerRole::Style);
    let content_ids = spec.layer_ids(LayerRole::Content);
    let mut all_ids = style_ids.clone();
    all_ids.extend(content_ids.iter().filter(|id| !style_ids.contains(id)).cloned());

    for (i, c) in candidates.iter().enumerate() {
        if c.media.is_none() {
            return Err(Error::Contract(format!("candidate {i} has no image to score")));
        }
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let style_ref = fetch_layers(backend, style_target, &style_ids, meter)?;
    let content_ref = fetch_layers(backend, content_target, &content_ids, meter)?;

    let results = parallel_map(candidates, max_in_flight, |i, c| -> Result<(f64, f64)> {
        let media = c.media.as_ref().expect("checked above");
        let maps = fetch_layers(backend, media, &all_ids, meter).map_err(|e| match e {
            Error::Scoring { message, .. } => Error::scoring(Some(i), message),
            other => other,
        })?;
        let mut style = 0.0;
        for id in &style_ids {
            style += style_distance(&maps[id], &style_ref[id]).map_err(|e| Error::scoring(Some(i), e.to_string()))?;
        }
        let mut content = 0.0;
        for id in &content_ids {
            content +=
                content_distance(&maps[id], &content_ref[id]).map_err(|e| Error::scoring(Some(i), e.to_string()))?;
        }
        Ok((style, content))
    });
    results.into_iter().collect()
}

fn raw_objectives(spec: &ScorerSpec, ctx: &ScoreContext<'_>, todo: &[Candidate]) -> Result<Vec<Vec<f64>>> {
    let backend_name = || spec.backend.as_deref().unwrap_or_default();
    let texts: Vec<String> = todo.iter().map(|c| c.text.clone()).collect();
    let singles = |v: Vec<f64>| v.into_iter().map(|x| vec![x]).collect();
    Ok(match spec.kind {
        ScorerKind::Lexical => {
            let reference = spec
                .reference
                .as_deref()
                .ok_or_else(|| Error::config("scorer.reference", "missing"))?;
            singles(lexical_score(reference, &texts))
        }
        ScorerKind::EmbeddingSimilarity => {
            let backend = ctx.registry.embed(backend_name())?;
            let sample = ctx
                .test_sample
                .ok_or_else(|| Error::config("task.test_sample", "embedding scorer needs a test sample"))?;
            singles(embedding_similarity_score(backend.as_ref(), sample, &texts, spec.frames, ctx.meter)?)
        }
        ScorerKind::PreferenceService => {
            let backend = ctx.registry.preference(backend_name())?;
            let prompt = ctx
                .init_description
                .ok_or_else(|| Error::config("task.init_description", "preference scorer needs the original prompt"))?;
            singles(preference_score(backend.as_ref(), prompt, todo, ctx.meter)?)
        }
        ScorerKind::GramStyle => {
            let backend = ctx.registry.features(backend_name())?;
            gram_style_score(backend.as_ref(), todo, spec, ctx.meter, ctx.max_in_flight)?
                .into_iter()
                .map(|(s, c)| vec![s, c])
                .collect()
        }
    })
}

fn directions(spec: &ScorerSpec) -> Vec<Direction> {
    match spec.kind {
        ScorerKind::GramStyle => vec![Direction::Minimize, Direction::Minimize],
        _ => vec![spec.direction],
    }
}

/// Attaches a score to every candidate, preserving order. Candidates whose
/// text and media were already scored in this run reuse the memoized value.
pub fn batch_score(spec: &ScorerSpec, ctx: &ScoreContext<'_>, candidates: Vec<Candidate>) -> Result<Vec<Candidate>> {
    let mut out = candidates;
    let mut todo_idx = Vec::new();
    let mut todo_keys: Vec<(String, Option<ContentHash>)> = Vec::new();
    for (i, c) in out.iter_mut().enumerate() {
        let key = memo_key(c);
        if let Some(score) = ctx.memo.entries.get(&key) {
            ctx.meter.record_cache_hit(1);
            c.score = Some(score.clone());
        } else if !todo_keys.contains(&key) {
            todo_keys.push(key);
            todo_idx.push(i);
        }
    }
    if !todo_idx.is_empty() {
        let todo: Vec<Candidate> = todo_idx.iter().map(|&i| out[i].clone()).collect();
        let raw = raw_objectives(spec, ctx, &todo).map_err(|e| match e {
            Error::Scoring { index: Some(j), message } => Error::scoring(Some(todo_idx[j]), message),
            other => other,
        })?;
        let dirs = directions(spec);
        for (j, values) in raw.into_iter().enumerate() {
            let objectives = spec
                .objective_names
                .iter()
                .zip(values)
                .zip(&dirs)
                .map(|((name, v), d)| Objective::new(name.clone(), v, *d))
                .collect();
            let score = ScoreValue::new(objectives, &spec.weights).map_err(|e| match e {
                Error::Scoring { message, .. } => Error::scoring(Some(todo_idx[j]), message),
                other => other,
            })?;
            ctx.memo.entries.insert(todo_keys[j].clone(), score);
        }
    }
    // Fill every candidate (including in-batch duplicates) from the memo.
    for c in out.iter_mut() {
        if c.score.is_none() {
            c.score = ctx.memo.entries.get(&memo_key(c)).map(|s| s.clone());
        }
    }
    Ok(out)
}
