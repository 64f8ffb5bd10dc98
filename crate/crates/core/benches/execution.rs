use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use drillsim::config::{Traversal, TraversalMode, TrialConfig};
use drillsim::controller::run_batch;
use drillsim::exec::Execution;
use drillsim::specimen::{make_specimen, SpecimenConfig};
use drillsim::Vec3;

const STRATEGIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn batch(c: &mut Criterion) {
    let mut config = TrialConfig::default();
    config.noise.sigma = 0.19;
    config.max_time = 10.0;
    let mut group = c.benchmark_group("batch_8_trials");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_batch(&config, 8, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn full_lap_sweep(c: &mut Criterion) {
    let base = make_specimen(&SpecimenConfig::uniform(300e-6), 1).unwrap();
    let lap: Vec<Vec3> = (0..=72)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 72.0;
            Vec3::new(8e-3 * a.cos(), 8e-3 * a.sin(), -150e-6)
        })
        .collect();
    let mut group = c.benchmark_group("full_lap_sweep");
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter_batched(
                || {
                    let mut s = base.clone();
                    s.set_execution(exec);
                    s
                },
                |mut s| s.sweep(&lap, 0.7e-3),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn quasi_static_trial(c: &mut Criterion) {
    let config = TrialConfig {
        traversal: Traversal { mode: TraversalMode::QuasiStatic, lap_period: 10.0 },
        specimen: SpecimenConfig::uniform(300e-6),
        max_time: 5.0,
        ..TrialConfig::default()
    };
    let mut group = c.benchmark_group("quasi_static_5s");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                drillsim::controller::Trial::new(config.clone())
                    .unwrap()
                    .with_execution(exec)
                    .record_trace(false)
                    .run()
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch, full_lap_sweep, quasi_static_trial);
criterion_main!(benches);
