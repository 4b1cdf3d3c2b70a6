use std::collections::HashMap;

use crate::candidate::normalize_text;

fn term_counts(text: &str) -> HashMap<String, f64> {
    let mut counts = HashMap::new();
    for token in normalize_text(text).split_whitespace() {
        *counts.entry(token.to_string()).or_insert(0.0) += 1.0;
    }
    counts
}

/// Cosine similarity of term-frequency vectors; 0 if either side is empty.
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let ta = term_counts(a);
    let tb = term_counts(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let dot: f64 = ta.iter().filter_map(|(k, v)| tb.get(k).map(|w| v * w)).sum();
    let na: f64 = ta.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = tb.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Scores each text against `reference`.
pub fn lexical_score(reference: &str, texts: &[String]) -> Vec<f64> {
    let reference = term_counts(reference);
    let ref_norm: f64 = reference.values().map(|v| v * v).sum::<f64>().sqrt();
    texts
        .iter()
        .map(|t| {
            let counts = term_counts(t);
            if counts.is_empty() || reference.is_empty() {
                return 0.0;
            }
            let dot: f64 = counts.iter().filter_map(|(k, v)| reference.get(k).map(|w| v * w)).sum();
            let norm: f64 = counts.values().map(|v| v * v).sum::<f64>().sqrt();
            (dot / (norm * ref_norm)).clamp(0.0, 1.0)
        })
        .collect()
}
