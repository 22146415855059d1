use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tunnelclock::gpe::Stepper;
use tunnelclock::{larmor_times_global, weak_value_density, EnsembleWeighting, VelocityDistribution};
use tunnelclock_bench::{barrier, collision, solver};

fn transfer_matrix(c: &mut Criterion) {
    let (tm, b) = (solver(), barrier());
    c.bench_function("tmm_solve", |bench| bench.iter(|| tm.solve(&b, black_box(4.6)).unwrap()));
    c.bench_function("larmor_times_global", |bench| {
        bench.iter(|| larmor_times_global(&tm, &b, black_box(4.6)).unwrap())
    });
    c.bench_function("weak_value_density", |bench| {
        bench.iter(|| weak_value_density(&tm, &b, black_box(4.6)).unwrap())
    });
    let dist = VelocityDistribution::thomas_fermi_with_rms(4.6, 0.35).unwrap();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    group.bench_function("thomas_fermi_average", |bench| {
        bench.iter(|| {
            tunnelclock::ensemble_average_times(&tm, &b, &dist, EnsembleWeighting::Probability).unwrap()
        })
    });
    group.finish();
}

fn split_step(c: &mut Criterion) {
    let (ham, field, dt) = collision();
    let mut stepper = Stepper::new(ham, dt).unwrap();
    let mut f = field.clone();
    c.bench_function("gp_step_8192", |bench| bench.iter(|| stepper.step(black_box(&mut f))));
}

criterion_group!(benches, transfer_matrix, split_step);
criterion_main!(benches);
