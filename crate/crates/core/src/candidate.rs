//! Candidates, their scores, and the text key used to deduplicate them.

use serde::{Deserialize, Serialize};

use crate::backends::MediaHandle;
use crate::error::{Error, Result};

/// Whether an objective should be pushed up or down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Sign that turns a raw value into "higher is better".
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub name: String,
    pub value: f64,
    pub direction: Direction,
}

impl Objective {
    pub fn new(name: impl Into<String>, value: f64, direction: Direction) -> Self {
        Self {
            name: name.into(),
            value,
            direction,
        }
    }
}

/// Raw per-objective values plus the scalar ranking key derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    objectives: Vec<Objective>,
    scalar: f64,
}

impl ScoreValue {
    /// Builds a score, scalarizing the objectives with `weights`.
    pub fn new(objectives: Vec<Objective>, weights: &[f64]) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::Contract("a score needs at least one objective".into()));
        }
        if let Some(bad) = objectives.iter().find(|o| !o.value.is_finite()) {
            return Err(Error::scoring(
                None,
                format!("objective `{}` is not finite ({})", bad.name, bad.value),
            ));
        }
        let scalar = scalarize_scores(&objectives, weights)?;
        Ok(Self { objectives, scalar })
    }

    /// A single maximize objective with unit weight; the scalar equals `value`.
    pub fn single(name: impl Into<String>, value: f64) -> Result<Self> {
        Self::new(vec![Objective::new(name, value, Direction::Maximize)], &[1.0])
    }

    pub fn objectives(&self) -> &[Objective] {
        &self.objectives
    }

    pub fn scalar(&self) -> f64 {
        self.scalar
    }
}

/// Weighted sum of objectives with minimize objectives negated.
pub fn scalarize_scores(objectives: &[Objective], weights: &[f64]) -> Result<f64> {
    if objectives.len() != weights.len() {
        return Err(Error::config(
            "scorer.weights",
            format!(
                "{} weights given for {} objectives",
                weights.len(),
                objectives.len()
            ),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::config("scorer.weights", "weights must be finite and non-negative"));
    }
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(Error::config("scorer.weights", "weights must not all be zero"));
    }
    Ok(objectives
        .iter()
        .zip(weights)
        .map(|(o, w)| w * o.direction.sign() * o.value)
        .sum())
}

/// Dedup key: lowercase, trimmed, single-spaced, trailing `.`/`!`/`?` removed.
pub fn normalize_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let keep = collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?') || c.is_whitespace())
        .len();
    collapsed.truncate(keep);
    collapsed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateId(pub u64);

/// One proposed solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub text: String,
    pub media: Option<MediaHandle>,
    pub score: Option<ScoreValue>,
    pub step_created: usize,
    normalized_key: String,
}

impl Candidate {
    pub fn new(id: CandidateId, text: impl Into<String>, step_created: usize) -> Self {
        let text = text.into();
        let normalized_key = normalize_text(&text);
        Self {
            id,
            text,
            media: None,
            score: None,
            step_created,
            normalized_key,
        }
    }

    pub fn with_media(mut self, media: MediaHandle) -> Self {
        self.media = Some(media);
        self
    }

    pub fn with_score(mut self, score: ScoreValue) -> Self {
        self.score = Some(score);
        self
    }

    pub fn normalized_key(&self) -> &str {
        &self.normalized_key
    }

    /// Ranking key; `None` until the candidate has been scored.
    pub fn scalar(&self) -> Option<f64> {
        self.score.as_ref().map(ScoreValue::scalar)
    }
}

/// Hands out sequential candidate ids for one run.
#[derive(Debug, Default)]
pub struct IdSource {
    next: std::sync::atomic::AtomicU64,
}

impl IdSource {
    pub fn next_id(&self) -> CandidateId {
        CandidateId(self.next.fetch_add(1, std::sync::atomic::Ordering::Relaxed))
    }
}
