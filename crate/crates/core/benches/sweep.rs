use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rdpcap::config::Calibration;
use rdpcap::harness::{run_sweep_with, ExperimentSpec, Scenario};
use rdpcap::par::Parallelism;
use rdpcap::topology::empty_cell_trials;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn small_sweep() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(Scenario::Example1, vec![128, 256, 512], 4);
    spec.base.calibration = Some(Calibration {
        f_single: 1.0,
        chat: 0.37,
    });
    spec.horizon_slots = 20_000;
    spec.target_transitions = 0.0;
    spec
}

fn sweep(c: &mut Criterion) {
    let spec = small_sweep();
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| run_sweep_with(&spec, mode).unwrap())
        });
    }
    g.finish();
}

fn empty_cells(c: &mut Criterion) {
    let mut g = c.benchmark_group("empty_cell_trials");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| empty_cell_trials(400, 5_000, 1, mode))
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, empty_cells);
criterion_main!(benches);
