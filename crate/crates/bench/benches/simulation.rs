use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use teduchain_core::sim::{generate_scenario, run_simulation, GenParams};

fn simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation");
    group.sample_size(20);
    for nodes in [1usize, 3, 5] {
        let scenario = generate_scenario(GenParams { nodes, ..GenParams::default() }, 42);
        group.bench_with_input(BenchmarkId::new("nodes", nodes), &scenario, |b, s| {
            b.iter(|| run_simulation(black_box(s), 7).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, simulate);
criterion_main!(benches);
