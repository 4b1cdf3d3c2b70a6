//! Caption metrics for quick sanity checks.

use std::collections::HashMap;

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU-4 over whitespace tokens: geometric mean of the
/// clipped 1- to 4-gram precisions times the brevity penalty, with no
/// smoothing. The reference length is the one closest to the candidate
/// (shorter wins ties). Empty `references` gives 0.
pub fn bleu4(candidate: &str, references: &[String]) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refs: Vec<Vec<&str>> = references.iter().map(|r| r.split_whitespace().collect()).collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let counts = ngram_counts(&cand, n);
        let total: usize = counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let slot = max_ref.entry(g).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        let clipped: usize = counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(rs: &[&str]) -> Vec<String> {
        rs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_is_one() {
        assert!((bleu4("a man rides a horse", &refs(&["a man rides a horse"])) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(bleu4("blue sky", &refs(&["a man rides a horse"])), 0.0);
    }

    #[test]
    fn hand_evaluated_values() {
        // Three tokens cannot form a 4-gram, so p4 has no mass.
        assert_eq!(bleu4("the cat sat", &refs(&["the cat sat down"])), 0.0);
        // p = 6/7, 5/6, 4/5, 3/4 and no penalty (candidate longer).
        let v = bleu4("the cat sat on the mat today", &refs(&["the cat sat on the mat"]));
        assert!((v - 0.809_106_711_570_221_2).abs() < 1e-12, "{v}");
        // All precisions 1, penalty exp(1 - 6/4).
        let v = bleu4("the cat sat on", &refs(&["the cat sat on the mat"]));
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn closest_reference_length_is_used() {
        let v = bleu4("the cat sat on", &refs(&["the cat sat on the mat", "the cat sat on it"]));
        // Closest reference has 5 tokens.
        assert!((v - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_repeats() {
        assert_eq!(bleu4("the the the the", &refs(&["the cat"])), 0.0);
    }
}
