use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use agent_graph::backend::SimulatedLatency;
use agent_graph::bench::synthetic::build_synthetic_suite;
use agent_graph::bench::{run_benchmark, BenchOptions};
use agent_graph::pipeline::{run, Pooling, RunConfig};

const CALL_LATENCY: Duration = Duration::from_millis(2);

fn stage_concurrency(c: &mut Criterion) {
    let suite = build_synthetic_suite(2024).expect("suite builds");
    let backend = SimulatedLatency::new(suite.backend(), CALL_LATENCY);
    let item = &suite.items[0];
    let mut group = c.benchmark_group("one_query");
    group.sample_size(10);
    for parallel in [false, true] {
        let cfg = RunConfig {
            pooling: Pooling::Mean,
            parallel,
            ..RunConfig::default()
        };
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::new("graph_mean", label), &cfg, |b, cfg| {
            b.iter(|| run(&item.query, &suite.registry, cfg, &backend).expect("run completes"))
        });
    }
    group.finish();
}

fn item_concurrency(c: &mut Criterion) {
    let suite = build_synthetic_suite(2024).expect("suite builds");
    let backend = SimulatedLatency::new(suite.backend(), CALL_LATENCY);
    let items = &suite.items[..12];
    let mut group = c.benchmark_group("twelve_items");
    group.sample_size(10);
    for threads in [1, 4] {
        let cfg = RunConfig {
            parallel: threads > 1,
            ..RunConfig::default()
        };
        let opts = BenchOptions {
            threads,
            trace_dir: None,
        };
        group.bench_with_input(BenchmarkId::new("graph_max", format!("{threads}_threads")), &cfg, |b, cfg| {
            b.iter(|| run_benchmark(items, &suite.registry, cfg, &backend, &opts).expect("bench completes"))
        });
    }
    group.finish();
}

criterion_group!(benches, stage_concurrency, item_concurrency);
criterion_main!(benches);
