use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use genscore::{check_convergence, epsilon_greedy_select, top_k_select};
use genscore_bench::{random_phrases, scored_pool};
use std::hint::black_box;

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("select");
    for n in [1_000, 10_000] {
        let pool = scored_pool(n, 7);
        group.bench_with_input(BenchmarkId::new("top_k_50", n), &pool, |b, pool| {
            b.iter(|| top_k_select(black_box(pool), 50))
        });
        group.bench_with_input(BenchmarkId::new("epsilon_greedy_50", n), &pool, |b, pool| {
            b.iter(|| epsilon_greedy_select(black_box(pool), 50, 0.2, 11))
        });
    }
    group.finish();
}

fn merge(c: &mut Criterion) {
    let base = scored_pool(1_000, 3);
    let incoming: Vec<_> = scored_pool(50, 4).iter().cloned().collect();
    c.bench_function("merge_50_into_1000", |b| {
        b.iter_batched(
            || base.clone(),
            |mut pool| pool.merge(incoming.iter().cloned()).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn convergence(c: &mut Criterion) {
    let a = random_phrases(50, 1);
    let mut b_set = a.clone();
    b_set.truncate(40);
    b_set.extend(random_phrases(10, 2));
    c.bench_function("jaccard_50", |b| b.iter(|| check_convergence(black_box(&a), black_box(&b_set), 0.9)));
}

criterion_group!(benches, selection, merge, convergence);
criterion_main!(benches);
