use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jim_bench::graphs;
use jim_core::numeric::rng_from_seed;
use jim_core::partition::brute_force_partition;
use jim_core::greedy_partition;

fn greedy(c: &mut Criterion) {
    let mut group = c.benchmark_group("greedy_partition");
    for n in [4, 16, 64] {
        let gs = graphs(n, 32, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &gs, |b, gs| {
            let mut rng = rng_from_seed(0);
            b.iter(|| gs.iter().map(|g| greedy_partition(g, &mut rng).len()).sum::<usize>())
        });
    }
    group.finish();
}

fn brute(c: &mut Criterion) {
    let mut group = c.benchmark_group("brute_force_partition");
    group.sample_size(10);
    for n in [6, 8] {
        let gs = graphs(n, 4, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &gs, |b, gs| {
            b.iter(|| gs.iter().map(|g| brute_force_partition(g, 0.01).unwrap().len()).sum::<usize>())
        });
    }
    group.finish();
}

criterion_group!(benches, greedy, brute);
criterion_main!(benches);
