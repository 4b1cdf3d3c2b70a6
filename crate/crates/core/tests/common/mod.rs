#![allow(dead_code)]

use std::path::{Path, PathBuf};

use genscore::backends::{ContentHash, MediaHandle, MediaKind, Registry};
use genscore::generators::GeneratorSpec;
use genscore::scorers::{lexical_similarity, ScorerSpec};
use genscore::{Bootstrap, Engine, RunConfig, TaskKind, TaskSpec, TemplateStore};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TEMPLATE_NAMES: [&str; 7] = [
    "bootstrap_audio",
    "caption_image",
    "caption_video",
    "caption_audio",
    "t2i_enhance",
    "style_transfer",
    "cross_modal_combine",
];

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Plain text of a LaTeX prompt body: per-line trim, drop `\\` line breaks,
/// unescape braces and underscores, convert TeX quotes.
pub fn latex_to_text(tex: &str) -> String {
    let lines: Vec<String> = tex
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.strip_suffix("\\\\").unwrap_or(l).trim_end();
            l.replace("\\{", "{")
                .replace("\\}", "}")
                .replace("\\_", "_")
                .replace("``", "\"")
                .replace('`', "'")
        })
        .collect();
    let start = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(start, |i| i + 1);
    lines[start..end].join("\n")
}

pub fn virtual_image(tag: &str) -> MediaHandle {
    MediaHandle {
        kind: MediaKind::Image,
        uri_or_path: format!("/virtual/{tag}"),
        content_hash: ContentHash::of(tag.as_bytes()),
    }
}

pub fn strings(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

/// Mutation generator + lexical scorer against `target`.
pub fn oracle_task(vocab: &[String], target: &str, bootstrap: Bootstrap, run: RunConfig) -> TaskSpec {
    TaskSpec {
        kind: TaskKind::CaptionImage,
        generator: GeneratorSpec::mock_mutation(vocab.to_vec(), Some(3)),
        scorer: ScorerSpec::lexical(target),
        run,
        test_sample: Some(virtual_image("sample")),
        init_description: None,
        bootstrap: Some(bootstrap),
        arithmetic: None,
    }
}

pub fn oracle_engine() -> Engine {
    Engine::new(Registry::new(), TemplateStore::builtin())
}

/// Every phrase of 1..=max_len vocabulary tokens.
pub fn phrase_universe(vocab: &[String], max_len: usize) -> Vec<String> {
    let mut all = Vec::new();
    let mut layer: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|p| {
                vocab.iter().map(move |w| {
                    let mut q = p.clone();
                    q.push(w.as_str());
                    q
                })
            })
            .collect();
        all.extend(layer.iter().map(|p| p.join(" ")));
    }
    all
}

/// Exhaustive search: best lexical score and a phrase achieving it.
pub fn brute_force(vocab: &[String], target: &str, max_len: usize) -> (f64, String) {
    phrase_universe(vocab, max_len)
        .into_iter()
        .map(|p| (lexical_similarity(target, &p), p))
        .fold((f64::NEG_INFINITY, String::new()), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// `n` random phrases of 1..=3 tokens.
pub fn random_phrases(vocab: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = *[1usize, 2, 3].choose(&mut rng).unwrap();
            (0..len)
                .map(|_| vocab.choose(&mut rng).unwrap().as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}
