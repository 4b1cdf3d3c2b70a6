//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use genscore::artifacts::{write_manifest, write_result, RunManifest};
use genscore::backends::mock::{ChatRule, EmbedScript, PreferenceScript};
use genscore::backends::{
    Api, BackendEndpoint, MediaHandle, MediaKind, MediaStore, MockScript, MockServer, Registry, ResponseCache,
};
use genscore::candidate::{CandidateId, ScoreValue};
use genscore::config::ConfigFile;
use genscore::generators::{GeneratorKind, GeneratorSpec};
use genscore::pool::rank_order;
use genscore::prompts::FeedbackMode;
use genscore::scorers::{gram_matrix, style_distance, FeatureMap, ScorerKind, ScorerSpec};
use genscore::solver::{ArithmeticSpec, CombineSpec, StageSpec};
use genscore::{
    epsilon_greedy_select, format_feedback, parse_numbered_list, top_k_select, Bootstrap, Candidate, CandidatePool,
    Engine, RunConfig, TaskKind, TaskSpec, TemplateStore,
};
use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

const VOCAB8: [&str; 8] = ["a", "red", "car", "dog", "blue", "big", "on", "road"];

fn random_target(rng: &mut ChaCha8Rng, words: &[&str], len: usize) -> String {
    let mut w = words.to_vec();
    w.shuffle(rng);
    w[..len].join(" ")
}

fn oracle_run(top_k: usize, max_steps: usize, requested: usize, seed: u64) -> RunConfig {
    RunConfig {
        top_k,
        max_steps,
        requested_number: requested,
        seed,
        ..RunConfig::default()
    }
}

/// Loop-shape: best never drops and usually improves.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let vocab = strings(&VOCAB8);
    let mut improved = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = random_target(&mut rng, &VOCAB8, 3);
        let boot = Bootstrap::Inline {
            texts: random_phrases(&vocab, 5, seed + 1000),
        };
        let task = oracle_task(&vocab, &target, boot, oracle_run(5, 10, 20, seed));
        let result = oracle_engine().run_optimization(&task).map_err(|e| e.to_string())?;
        let steps = &result.trace.steps;
        ensure(steps.len() == 11, format!("seed {seed}: {} trace records", steps.len()))?;
        ensure(result.trace.is_monotone(), format!("seed {seed}: best_scalar decreased"))?;
        if steps[10].best_scalar > steps[0].best_scalar {
            improved += 1;
        }
    }
    ensure(improved >= 18, format!("strict improvement in {improved}/20 runs"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "monotone 20/20, improved {improved}/20, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

/// Oracle optimality against exhaustive search.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let vocab = strings(&VOCAB8);
    let universe = phrase_universe(&vocab, 3).len();
    ensure(universe <= 585, format!("universe has {universe} phrases"))?;
    // Targets may use words outside the vocabulary and exceed three tokens,
    // so the optimum is often below 1.
    let target_words = ["a", "red", "car", "dog", "blue", "big", "sky", "zebra", "road"];
    let (mut matched, mut tied, mut optimum_below_one) = (0, 0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let len = rng.random_range(2..=4);
        let target = random_target(&mut rng, &target_words, len);
        let (oracle, _) = brute_force(&vocab, &target, 3);
        if oracle < 1.0 {
            optimum_below_one += 1;
        }
        let boot = Bootstrap::Inline {
            texts: random_phrases(&vocab, 5, seed + 77),
        };
        let task = oracle_task(&vocab, &target, boot, oracle_run(5, 10, 50, seed));
        let result = oracle_engine().run_optimization(&task).map_err(|e| e.to_string())?;
        let best = result.best.scalar().unwrap();
        if best == oracle {
            matched += 1;
        } else if (best - oracle).abs() <= 1e-9 {
            tied += 1;
        } else {
            return Err(format!(
                "seed {seed}: `{}` scores {best}, oracle {oracle} for `{target}`",
                result.best.text
            ));
        }
    }
    ensure(matched >= 19, format!("exact matches {matched}/20"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "matched {matched}/20, tied {tied}, {optimum_below_one} targets with optimum < 1, universe {universe}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

/// Bigger bootstrap sets never lower the mean final best.
fn criterion_3() -> Outcome {
    let start = Instant::now();
    let vocab: Vec<String> = (0..24).map(|i| format!("w{i}")).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sizes = [10usize, 100, 1000];
    let mut sums = [0.0; 3];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let words: Vec<&str> = vocab.iter().map(String::as_str).collect();
        let target = random_target(&mut rng, &words, 3);
        let file = dir.path().join(format!("boot_{seed}.txt"));
        genscore::generators::bootstrap_write(&file, &random_phrases(&vocab, 1200, seed))
            .map_err(|e| e.to_string())?;
        for (i, &size) in sizes.iter().enumerate() {
            let boot = Bootstrap::File {
                path: file.clone(),
                limit: Some(size),
            };
            let task = oracle_task(&vocab, &target, boot, oracle_run(5, 3, 10, seed));
            let result = oracle_engine().run_optimization(&task).map_err(|e| e.to_string())?;
            sums[i] += result.best.scalar().unwrap();
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / 20.0).collect();
    ensure(
        means.windows(2).all(|w| w[1] >= w[0]),
        format!("means {means:?} decrease"),
    )?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "mean final best {:.4} / {:.4} / {:.4} for sizes 10 / 100 / 1000, {:.2}s",
        means[0],
        means[1],
        means[2],
        start.elapsed().as_secs_f64()
    ))
}

/// top-K against a full-sort oracle.
fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tie_pools = 0;
    for trial in 0..1000 {
        // Log-uniform sizes, with the largest size forced periodically.
        let size = if trial % 100 == 0 {
            10_000
        } else {
            (10f64.powf(rng.random_range(0.0..4.0))) as usize
        };
        let levels = if trial % 2 == 0 { 5 } else { 1_000_000 };
        let cands: Vec<Candidate> = (0..size)
            .map(|i| {
                let s = rng.random_range(0..levels) as f64 / levels as f64;
                Candidate::new(CandidateId(i as u64), format!("c{i}"), 0)
                    .with_score(ScoreValue::single("s", s).unwrap())
            })
            .collect();
        let mut pool = CandidatePool::new(None);
        pool.merge(cands.clone()).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..=size.max(1) + 5);
        let mut sorted = cands;
        sorted.sort_by(rank_order);
        let oracle: Vec<String> = sorted.iter().take(k).map(|c| c.text.clone()).collect();
        let got: Vec<String> = top_k_select(&pool, k).into_iter().map(|c| c.text).collect();
        ensure(got == oracle, format!("trial {trial}: top-{k} of {size} differs"))?;
        let eps0: Vec<String> = epsilon_greedy_select(&pool, k, 0.0, trial as u64)
            .into_iter()
            .map(|c| c.text)
            .collect();
        ensure(eps0 == oracle, format!("trial {trial}: epsilon 0 differs from top-K"))?;
        if k < size && sorted[k - 1].scalar() == sorted[k].scalar() {
            tie_pools += 1;
        }
    }
    ensure(tie_pools > 0, "no pool exercised a tie at the cut")?;
    Ok(format!(
        "1000 pools equal to sort oracle, {tie_pools} with ties at the cut, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, m: usize) -> FeatureMap {
    let values = (0..c * m).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureMap::new("l", c, m, values).unwrap()
}

/// Gram symmetry, PSD, t^2 scaling, zero self-distance.
fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_eig = f64::INFINITY;
    let mut max_rel = 0.0f64;
    for trial in 0..60 {
        let c = if trial % 10 == 0 { 64 } else { rng.random_range(1..=64) };
        let m = if trial % 10 == 0 { 256 } else { rng.random_range(1..=256) };
        let f = random_map(&mut rng, c, m);
        let g = gram_matrix(&f);
        for i in 0..c {
            for j in 0..c {
                ensure(g.get(i, j) == g.get(j, i), format!("trial {trial}: asymmetric at ({i},{j})"))?;
            }
        }
        let eig = DMatrix::from_row_slice(c, c, &g.data).symmetric_eigenvalues();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(lo);
        ensure(lo >= -1e-9, format!("trial {trial}: eigenvalue {lo}"))?;

        let t: f64 = rng.random_range(0.1..10.0);
        let scaled = FeatureMap::new("l", c, m, f.values().iter().map(|v| v * t).collect()).unwrap();
        let gs = gram_matrix(&scaled);
        // Errors relative to the largest entry of t^2 G, so near-zero
        // entries do not blow up the ratio.
        let scale = g.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * t * t;
        for (a, b) in gs.data.iter().zip(&g.data) {
            let rel = (a - t * t * b).abs() / scale.max(f64::MIN_POSITIVE);
            max_rel = max_rel.max(rel);
        }
        ensure(max_rel <= 1e-6, format!("trial {trial}: scaling error {max_rel}"))?;
        let self_d = style_distance(&f, &f).map_err(|e| e.to_string())?;
        ensure(self_d == 0.0, format!("trial {trial}: self distance {self_d}"))?;
    }
    Ok(format!(
        "60 maps up to 64x256, min eigenvalue {min_eig:.3e}, max scaling error {max_rel:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

/// Stored templates equal the golden prompts; feedback lines survive rendering.
fn criterion_6() -> Outcome {
    let store = TemplateStore::builtin();
    for name in TEMPLATE_NAMES {
        let tex = std::fs::read_to_string(golden_dir().join(format!("{name}.tex"))).map_err(|e| e.to_string())?;
        let body = store.get(name).map_err(|e| e.to_string())?.body();
        ensure(body == latex_to_text(&tex), format!("`{name}` differs from its golden file"))?;
    }
    let selected: Vec<Candidate> = (0..50)
        .map(|i| {
            Candidate::new(CandidateId(i), format!("caption number {i}"), 0)
                .with_score(ScoreValue::single("s", 1.0 - i as f64 / 100.0).unwrap())
        })
        .collect();
    let feedback = format_feedback(&selected, FeedbackMode::Single).map_err(|e| e.to_string())?;
    let bindings = HashMap::from([
        ("descriptions".to_string(), feedback.to_string()),
        ("requested_number".to_string(), "50".to_string()),
    ]);
    let prompt = store
        .get("caption_image")
        .and_then(|t| t.render(&bindings))
        .map_err(|e| e.to_string())?;
    let mut at = 0;
    for (i, c) in selected.iter().enumerate() {
        let line = format!("{:.3}: {}", c.scalar().unwrap(), c.text);
        let found = prompt[at..].find(&line).ok_or(format!("line {i} missing or out of order"))?;
        at += found + line.len();
    }
    Ok(format!("{} templates byte-identical, 50/50 feedback lines in order", TEMPLATE_NAMES.len()))
}

/// Parser round trip and fuzz robustness.
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet: Vec<char> = "abcdefgh XYZ,'-éü".chars().collect();
    for trial in 0..1000 {
        let n = rng.random_range(0..60);
        let items: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.random_range(1..30);
                let s: String = (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
                let s = s.trim().to_string();
                if s.is_empty() {
                    "x".to_string()
                } else {
                    s
                }
            })
            .collect();
        let raw: Vec<String> = items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let sep = if rng.random_bool(0.5) { "." } else { ")" };
                format!("{}{sep} {s}", i + 1)
            })
            .collect();
        let parsed = parse_numbered_list(&raw.join("\n"));
        ensure(parsed == items, format!("trial {trial}: round trip failed"))?;
    }
    let pieces = ["1.", "2)", " ", "\n", "\r\n", "a", "9999999999999999999999.", "(3)", "\t", "é", ".", ")", "0. x"];
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for trial in 0..10_000 {
        let input: String = if trial % 2 == 0 {
            (0..rng.random_range(0..40)).map(|_| *pieces.choose(&mut rng).unwrap()).collect()
        } else {
            let bytes: Vec<u8> = (0..rng.random_range(0..80)).map(|_| rng.random()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        };
        std::panic::catch_unwind(|| parse_numbered_list(&input))
            .map_err(|_| format!("panicked on fuzz input {trial}: {input:?}"))?;
    }
    Ok("1000 round trips, 10000 fuzz inputs without panic".into())
}

fn mock_endpoints(server: &MockServer) -> Vec<BackendEndpoint> {
    let ep = |name: &str, api| {
        let mut e = BackendEndpoint::new(name, server.base_url(), api, "mock");
        e.backoff_base_ms = 1;
        e
    };
    vec![
        ep("llm", Api::Chat),
        ep("embed", Api::Embed),
        ep("t2i", Api::ImageGen),
        ep("pref", Api::Preference),
    ]
}

fn http_engine(server: &MockServer, cache_dir: &Path) -> Result<Engine, String> {
    let cache = Arc::new(ResponseCache::on_disk(cache_dir));
    let media = Arc::new(MediaStore::new(cache_dir.join("media")));
    let registry = Registry::from_endpoints(&mock_endpoints(server), cache, media).map_err(|e| e.to_string())?;
    Ok(Engine::new(registry, TemplateStore::builtin()))
}

fn read_log(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn is_text_embedding(entry: &serde_json::Value) -> bool {
    entry["path"] == "/v1/embeddings" && entry["body"].get("input").is_some()
}

/// A rerun against the same cache sends no text embedding requests.
fn criterion_8() -> Outcome {
    let script = MockScript {
        chat: vec![ChatRule {
            contains: "*".into(),
            responses: vec!["1. a red car\n2. a blue car on a road\n3. a dog\n4. red road".into()],
        }],
        embeddings: EmbedScript {
            vocabulary: strings(&VOCAB8),
            vectors: BTreeMap::new(),
            media: BTreeMap::from([("image".to_string(), "a red car on a road".to_string())]),
        },
        ..MockScript::default()
    };
    let server = MockServer::start(script, 0).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let img = dir.path().join("sample.png");
    std::fs::write(&img, b"\x89PNG\r\n\x1a\nsample").map_err(|e| e.to_string())?;
    let task = TaskSpec {
        kind: TaskKind::CaptionImage,
        generator: GeneratorSpec::llm("caption_image", "llm"),
        scorer: ScorerSpec::new(ScorerKind::EmbeddingSimilarity).with_backend("embed"),
        run: oracle_run(5, 3, 4, 0),
        test_sample: Some(MediaHandle::load(MediaKind::Image, &img).map_err(|e| e.to_string())?),
        init_description: None,
        bootstrap: Some(Bootstrap::Inline {
            texts: strings(&["a dog", "blue", "big road", "a car"]),
        }),
        arithmetic: None,
    };
    let cache_dir = dir.path().join("cache");
    let mut text_calls = Vec::new();
    let mut identity = true;
    for run in 0..2 {
        let log = dir.path().join(format!("requests_{run}.jsonl"));
        server.responder().log_to(&log).map_err(|e| e.to_string())?;
        let result = http_engine(&server, &cache_dir)?
            .run_optimization(&task)
            .map_err(|e| e.to_string())?;
        let entries = read_log(&log)?;
        text_calls.push(entries.iter().filter(|e| is_text_embedding(e)).count());
        let embed_lines = entries.iter().filter(|e| e["path"] == "/v1/embeddings").count() as u64;
        let reported: u64 = result.trace.steps.iter().map(|s| s.scorer_calls).sum();
        identity &= embed_lines == reported;
    }
    ensure(text_calls[0] > 0, "first run made no text embedding calls")?;
    ensure(text_calls[1] == 0, format!("second run made {} text embedding calls", text_calls[1]))?;
    ensure(identity, "request log count differs from reported scorer_calls")?;
    Ok(format!(
        "text embedding requests: run 1 = {}, run 2 = 0; log lines equal scorer_calls",
        text_calls[0]
    ))
}

/// Unset hyperparameters resolve to the documented defaults.
fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for f in ["sample.png", "clip.mp4", "clip.wav"] {
        std::fs::write(dir.path().join(f), b"media").map_err(|e| e.to_string())?;
    }
    std::fs::write(dir.path().join("boot.txt"), "a cat\n").map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for (task, sample) in [
        ("caption_image", "sample.png"),
        ("caption_video", "clip.mp4"),
        ("caption_audio", "clip.wav"),
    ] {
        let doc = serde_json::json!({
            "task": task,
            "generator": {"kind": "llm", "backend": "llm"},
            "scorer": {"kind": "embedding_similarity", "backend": "embed"},
            "test_sample": sample,
            "bootstrap": {"source": "file", "path": "boot.txt"}
        });
        let cfg = ConfigFile::from_value(doc)
            .and_then(|c| c.resolve(dir.path()))
            .map_err(|e| e.to_string())?;
        let run = &cfg.task.run;
        ensure(
            (run.top_k, run.max_steps) == (50, 10),
            format!("{task}: K={} N={}", run.top_k, run.max_steps),
        )?;
        seen.push(format!("{task} K=50 N=10"));
    }
    let doc = serde_json::json!({
        "task": "t2i_enhance",
        "generator": {"kind": "llm_then_image", "backend": "llm", "media_backend": "t2i"},
        "scorer": {"kind": "preference_service", "backend": "pref"},
        "init_description": "a castle"
    });
    let cfg = ConfigFile::from_value(doc)
        .and_then(|c| c.resolve(dir.path()))
        .map_err(|e| e.to_string())?;
    ensure(
        (cfg.task.run.top_k, cfg.task.run.max_steps) == (50, 20),
        format!("t2i: K={} N={}", cfg.task.run.top_k, cfg.task.run.max_steps),
    )?;
    seen.push("t2i_enhance N=20".into());
    Ok(seen.join(", "))
}

/// Cross-modal arithmetic over the HTTP mock stack, with artifacts.
fn criterion_10() -> Outcome {
    let start = Instant::now();
    let rule = |contains: &str, reply: &str| ChatRule {
        contains: contains.into(),
        responses: vec![reply.into()],
    };
    let script = MockScript {
        chat: vec![
            rule("Image caption:", "A crane on grass beside ocean waves.\nSecond line"),
            rule("The description is:", "1. a crane on grass by ocean waves at dawn\n2. a crane\n3. waves"),
            rule("short image description", "1. a crane on grass\n2. a bird\n3. grass"),
            rule("short audio description", "1. ocean waves\n2. rain\n3. waves crashing"),
        ],
        embeddings: EmbedScript {
            vocabulary: strings(&["a", "crane", "on", "grass", "ocean", "waves", "bird", "rain"]),
            vectors: BTreeMap::new(),
            media: BTreeMap::from([
                ("image".to_string(), "a crane on grass".to_string()),
                ("audio".to_string(), "ocean waves".to_string()),
            ]),
        },
        preference: PreferenceScript::Length {
            base: 0.0,
            per_char: 0.01,
        },
        ..MockScript::default()
    };
    let server = MockServer::start(script, 0).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let image_path = dir.path().join("crane.png");
    let audio_path = dir.path().join("waves.wav");
    std::fs::write(&image_path, b"\x89PNG\r\n\x1a\ncrane").map_err(|e| e.to_string())?;
    std::fs::write(&audio_path, b"RIFF\0\0\0\0WAVEwaves").map_err(|e| e.to_string())?;
    let image = MediaHandle::load(MediaKind::Image, &image_path).map_err(|e| e.to_string())?;
    let audio = MediaHandle::load(MediaKind::Audio, &audio_path).map_err(|e| e.to_string())?;

    let stage = |template: &str| StageSpec {
        generator: GeneratorSpec::llm(template, "llm"),
        scorer: ScorerSpec::new(ScorerKind::EmbeddingSimilarity).with_backend("embed"),
        run: oracle_run(5, 2, 3, 0),
        bootstrap: Some(Bootstrap::Inline {
            texts: strings(&["a bird", "rain"]),
        }),
    };
    let task = TaskSpec {
        kind: TaskKind::CrossModalArithmetic,
        generator: GeneratorSpec {
            kind: GeneratorKind::LlmThenImage,
            media_backend: Some("t2i".into()),
            ..GeneratorSpec::llm("t2i_enhance", "llm")
        },
        scorer: ScorerSpec::new(ScorerKind::PreferenceService).with_backend("pref"),
        run: oracle_run(5, 3, 3, 0),
        test_sample: Some(image.clone()),
        init_description: None,
        bootstrap: None,
        arithmetic: Some(ArithmeticSpec {
            audio_sample: audio.clone(),
            image_stage: stage("caption_image"),
            audio_stage: stage("caption_audio"),
            combine: CombineSpec {
                backend: "llm".into(),
                template: "cross_modal_combine".into(),
                sampling: Default::default(),
            },
        }),
    };
    let out = dir.path().join("out");
    let engine = http_engine(&server, &dir.path().join("cache"))?;
    write_manifest(&RunManifest {
        config_path: dir.path().join("inline.json"),
        output_dir: out.clone(),
        task: task.clone(),
        engine_version: genscore::ENGINE_VERSION.into(),
        started_at: "2026-01-01T00:00:00Z".into(),
    })
    .map_err(|e| e.to_string())?;
    let result = engine.solve(&task).map_err(|e| e.to_string())?;
    write_result(&out, &result).map_err(|e| e.to_string())?;

    let image_caption = &result.stages[0].best.text;
    let audio_caption = &result.stages[1].best.text;
    ensure(image_caption == "a crane on grass", format!("image inversion gave `{image_caption}`"))?;
    ensure(audio_caption == "ocean waves", format!("audio inversion gave `{audio_caption}`"))?;
    let combine_prompt = server
        .responder()
        .requests()
        .into_iter()
        .filter_map(|r| r.body["messages"][0]["content"].as_str().map(str::to_string))
        .find(|c| c.contains("Image caption:"))
        .ok_or("no combine request was sent")?;
    ensure(
        combine_prompt.contains(&format!("Image caption: {image_caption}\n"))
            && combine_prompt.contains(&format!("Audio caption: {audio_caption}\n")),
        "combine prompt lacks a caption",
    )?;
    ensure(
        result.combined_prompt.as_deref() == Some("A crane on grass beside ocean waves."),
        "combine reply not reduced to its first line",
    )?;
    let media = result.best.media.as_ref().ok_or("best candidate has no image")?;
    for name in [
        "manifest.json".to_string(),
        "trace.jsonl".to_string(),
        "curve.csv".to_string(),
        "best.txt".to_string(),
        format!("best_media.{}", media.extension()),
    ] {
        ensure(out.join(&name).is_file(), format!("{name} missing"))?;
    }
    ensure(result.trace.is_monotone(), "t2i trace not monotone")?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "captions `{image_caption}` + `{audio_caption}`, best `{}`, artifacts written, {:.2}s",
        result.best.text,
        start.elapsed().as_secs_f64()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("loop shape", criterion_1),
        ("oracle optimality", criterion_2),
        ("init-set monotonicity", criterion_3),
        ("selection correctness", criterion_4),
        ("gram numerics", criterion_5),
        ("prompt fidelity", criterion_6),
        ("parser robustness", criterion_7),
        ("cache accounting", criterion_8),
        ("default hyperparameters", criterion_9),
        ("cross-modal smoke", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
