//! Fixtures shared by the benchmarks in `benches/`.

use genscore::scorers::FeatureMap;
use genscore::{Candidate, CandidateId, CandidatePool, Direction, Objective, ScoreValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 16] = [
    "a", "dog", "cat", "runs", "on", "the", "grass", "near", "blue", "water", "red", "ball", "under", "tree",
    "small", "bird",
];

pub fn random_phrase(rng: &mut impl Rng, max_tokens: usize) -> String {
    let n = rng.random_range(1..=max_tokens);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// A pool of `n` scored candidates with distinct texts. Scores are rounded
/// to two decimals so ties are common.
pub fn scored_pool(n: usize, seed: u64) -> CandidatePool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = (0..n).map(|i| {
        let value = (rng.random::<f64>() * 100.0).round() / 100.0;
        let score = ScoreValue::new(vec![Objective::new("s", value, Direction::Maximize)], &[1.0]).unwrap();
        Candidate::new(CandidateId(i as u64), format!("{} {i}", random_phrase(&mut rng, 6)), 0).with_score(score)
    });
    let mut pool = CandidatePool::new(None);
    pool.merge(candidates).unwrap();
    pool
}

pub fn random_phrases(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_phrase(&mut rng, 8)).collect()
}

pub fn random_features(layer: &str, channels: usize, spatial: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..channels * spatial).map(|_| rng.random::<f64>()).collect();
    FeatureMap::new(layer, channels, spatial, values).unwrap()
}
