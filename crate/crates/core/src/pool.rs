//! The deduplicated candidate pool and the selection rules run over it.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::candidate::{normalize_text, Candidate};
use crate::error::{Error, Result};

/// Ranking order: scalar descending, then normalized key ascending.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    let sa = a.scalar().unwrap_or(f64::NEG_INFINITY);
    let sb = b.scalar().unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then_with(|| a.normalized_key().cmp(b.normalized_key()))
}

/// Scored candidates keyed by normalized text.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    entries: HashMap<String, Candidate>,
    capacity: Option<usize>,
}

impl CandidatePool {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            entries: HashMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, normalized_key: &str) -> Option<&Candidate> {
        self.entries.get(normalized_key)
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.entries.contains_key(&normalize_text(text))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.entries.values()
    }

    /// The highest-ranked candidate.
    pub fn best(&self) -> Option<&Candidate> {
        self.entries.values().min_by(|a, b| rank_order(a, b))
    }

    pub fn max_scalar(&self) -> Option<f64> {
        self.best().and_then(Candidate::scalar)
    }

    /// Merges scored candidates. Duplicates keep the higher scalar (the
    /// incumbent on ties), then the pool is trimmed to capacity.
    pub fn merge(&mut self, new: impl IntoIterator<Item = Candidate>) -> Result<()> {
        let new: Vec<Candidate> = new.into_iter().collect();
        if let Some(pos) = new.iter().position(|c| c.score.is_none()) {
            return Err(Error::Contract(format!(
                "candidate {pos} (`{}`) merged without a score",
                new[pos].text
            )));
        }
        for cand in new {
            match self.entries.get(cand.normalized_key()) {
                Some(incumbent) if incumbent.scalar() >= cand.scalar() => {}
                _ => {
                    self.entries.insert(cand.normalized_key().to_string(), cand);
                }
            }
        }
        self.trim();
        Ok(())
    }

    fn trim(&mut self) {
        let Some(cap) = self.capacity else { return };
        if self.entries.len() <= cap {
            return;
        }
        let keep: Vec<String> = top_k_select(self, cap)
            .into_iter()
            .map(|c| c.normalized_key().to_string())
            .collect();
        let keep: HashSet<String> = keep.into_iter().collect();
        self.entries.retain(|k, _| keep.contains(k));
    }
}

fn ranked_prefix(pool: &CandidatePool, k: usize) -> Vec<&Candidate> {
    let mut all: Vec<&Candidate> = pool.entries.values().collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, |a, b| rank_order(a, b));
        all.truncate(k);
    }
    all.sort_by(|a, b| rank_order(a, b));
    all
}

/// The `k` best candidates in rank order.
pub fn top_k_select(pool: &CandidatePool, k: usize) -> Vec<Candidate> {
    ranked_prefix(pool, k).into_iter().cloned().collect()
}

/// Fills `ceil((1 - epsilon) * k)` slots greedily, then draws the rest
/// uniformly (seeded) from candidates ranked outside the top `k`. When that
/// tail is too small the remaining slots fall back to rank order.
pub fn epsilon_greedy_select(
    pool: &CandidatePool,
    k: usize,
    epsilon: f64,
    rng_seed: u64,
) -> Vec<Candidate> {
    let epsilon = epsilon.clamp(0.0, 1.0);
    let total = k.min(pool.len());
    let greedy = (((1.0 - epsilon) * k as f64) - 1e-9).ceil().max(0.0) as usize;
    let greedy = greedy.min(total);
    if greedy == total {
        return top_k_select(pool, total);
    }

    let mut ranked: Vec<&Candidate> = pool.entries.values().collect();
    ranked.sort_by(|a, b| rank_order(a, b));

    let mut picked: Vec<Candidate> = ranked[..greedy].iter().map(|c| (*c).clone()).collect();
    let explore = total - greedy;
    let tail = &ranked[k.min(ranked.len())..];
    let drawn = explore.min(tail.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for i in index::sample(&mut rng, tail.len(), drawn) {
        picked.push(tail[i].clone());
    }
    // Not enough low-ranked entries; take the band between greedy and k.
    for c in ranked[greedy..].iter().take(explore - drawn) {
        picked.push((*c).clone());
    }
    picked
}

/// Jaccard similarity of the two normalized text sets reaches `threshold`.
pub fn check_convergence(prev_topk: &[String], curr_topk: &[String], threshold: f64) -> bool {
    let prev: HashSet<String> = prev_topk.iter().map(|t| normalize_text(t)).collect();
    let curr: HashSet<String> = curr_topk.iter().map(|t| normalize_text(t)).collect();
    if prev.is_empty() && curr.is_empty() {
        return true;
    }
    let inter = prev.intersection(&curr).count() as f64;
    let union = prev.union(&curr).count() as f64;
    inter / union >= threshold
}
