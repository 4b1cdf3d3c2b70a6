use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use genscore::bleu4;
use genscore::scorers::{gram_matrix, lexical_score, style_distance};
use genscore_bench::{random_features, random_phrases};
use std::hint::black_box;

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    for (channels, spatial) in [(64, 1024), (256, 256)] {
        let a = random_features("l", channels, spatial, 1);
        let b = random_features("l", channels, spatial, 2);
        let id = format!("{channels}x{spatial}");
        group.bench_with_input(BenchmarkId::new("matrix", &id), &a, |bch, a| bch.iter(|| gram_matrix(black_box(a))));
        group.bench_with_input(BenchmarkId::new("style_distance", &id), &(a, b), |bch, (a, b)| {
            bch.iter(|| style_distance(black_box(a), black_box(b)).unwrap())
        });
    }
    group.finish();
}

fn text(c: &mut Criterion) {
    let texts = random_phrases(50, 5);
    let refs = random_phrases(5, 6);
    c.bench_function("lexical_score_50", |b| b.iter(|| lexical_score(black_box("a dog runs on the grass"), &texts)));
    c.bench_function("bleu4_5_refs", |b| b.iter(|| bleu4(black_box(&texts[0]), &refs)));
}

criterion_group!(benches, gram, text);
criterion_main!(benches);
