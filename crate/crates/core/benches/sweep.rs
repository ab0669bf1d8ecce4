use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use zsax::summarization::{Summarizer, SummaryConfig};
use zsax::sweep::{mindists_parallel, mindists_sequential};
use zsax::RandomWalk;

fn sweep(c: &mut Criterion) {
    let sm = Summarizer::new(SummaryConfig::default()).unwrap();
    let query = RandomWalk::new(1, 256, 7).unwrap().next().unwrap();
    let table = sm.mindist_table(&query).unwrap();
    let mut group = c.benchmark_group("mindist_sweep");
    for n in [10_000usize, 100_000, 1_000_000] {
        let mut symbols = Vec::with_capacity(n * 16);
        for s in RandomWalk::new(n, 256, 1).unwrap() {
            symbols.extend(sm.word(&s).unwrap().symbols);
        }
        group.bench_with_input(BenchmarkId::new("sequential", n), &symbols, |b, s| b.iter(|| mindists_sequential(&table, s)));
        group.bench_with_input(BenchmarkId::new("parallel", n), &symbols, |b, s| b.iter(|| mindists_parallel(&table, s)));
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
