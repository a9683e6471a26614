//! Sequential against rayon fan-out for a small sweep of independent runs.
//! Speedup is bounded by the core count and by the slowest cell.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pdflow::experiments::{simulate, ExperimentSpec};
use pdflow::parallel::map_sequential;

fn cells() -> Vec<ExperimentSpec> {
    [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
        .iter()
        .map(|&s| {
            let mut spec = ExperimentSpec::default();
            spec.params.s = s;
            spec.params.p = s;
            spec.run.t_end = 1e3;
            spec.run.samples = 200;
            spec
        })
        .collect()
}

fn run_cell(spec: &ExperimentSpec) -> f64 {
    simulate(spec).expect("bench cell runs").last().feasibility
}

fn bench_sweep(c: &mut Criterion) {
    let specs = cells();
    let mut group = c.benchmark_group("sweep_6_runs");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| map_sequential(&specs, run_cell)));
    #[cfg(feature = "parallel")]
    for workers in [2, 4] {
        group.bench_with_input(BenchmarkId::new("parallel", workers), &workers, |b, &w| {
            b.iter(|| pdflow::parallel::map_parallel(&specs, w, run_cell))
        });
    }
    group.finish();
}

fn bench_single_run(c: &mut Criterion) {
    let spec = &cells()[3];
    let mut group = c.benchmark_group("single_run");
    group.sample_size(10);
    group.bench_function("s=p=0.5 to 1e3", |b| b.iter(|| run_cell(spec)));
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_single_run);
criterion_main!(benches);
