use cavsim_bench::{scenario, STEPS};
use cavsim_core::run;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn five_vehicle_run(c: &mut Criterion) {
    let base = scenario("five_vehicle_blackout.json");
    let mut group = c.benchmark_group("five_vehicle_run");
    group.sample_size(10);
    for step in STEPS {
        let sc = base.with_prediction_step(step).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(step), &sc, |b, sc| {
            b.iter(|| run(sc).unwrap())
        });
    }
    group.finish();
}

fn nominal_run(c: &mut Criterion) {
    let sc = scenario("nominal_20.json");
    let mut group = c.benchmark_group("nominal_20");
    group.sample_size(10);
    group.bench_function("run", |b| b.iter(|| run(&sc).unwrap()));
    group.finish();
}

criterion_group!(benches, five_vehicle_run, nominal_run);
criterion_main!(benches);
