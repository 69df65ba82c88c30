use abx_core::*;
use criterion::{criterion_group, criterion_main, Criterion, Throughput};

fn trajectories(c: &mut Criterion) {
    let m = logit_scenario(&LogitParams {
        k: 50,
        ..Default::default()
    })
    .unwrap();
    let n = 10_000;
    let cfg = SimConfig::new(m, 0.5, n, 1);
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(n));
    let mut rep = 0;
    g.bench_function("trajectory N=10^4 K=50", |b| {
        b.iter(|| {
            rep += 1;
            simulate_trajectory(&cfg, &mut replication_rng(1, rep)).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, trajectories);
criterion_main!(benches);
