use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use entroflow::grid::make_grid;
use entroflow::harness::{reference_state, smooth_random_field};
use entroflow::metric::SpectralPlan;
use entroflow::models::{EnergyModel, Potential};
use entroflow::par::Exec;
use entroflow::stepper::{eps_continuation, StepOptions};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn transforms(c: &mut Criterion) {
    let grid = make_grid(2, 64).unwrap();
    let v = smooth_random_field(grid, 1, 0.0, 1.0, 16);
    let mut group = c.benchmark_group("dct_2d_64");
    for (name, exec) in POLICIES {
        let plan = SpectralPlan::new(grid).with_exec(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| plan.inverse(&plan.forward(black_box(v.values()))))
        });
    }
    group.finish();
}

fn eps_sweep(c: &mut Criterion) {
    let grid = make_grid(1, 64).unwrap();
    let plan = SpectralPlan::new(grid);
    let u0 = reference_state(grid);
    let opts = StepOptions::new(0.01);
    let list = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 0.0];
    let mut group = c.benchmark_group("eps_continuation");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                eps_continuation(
                    &EnergyModel::Caginalp,
                    &Potential::DoubleWell,
                    &plan,
                    &u0,
                    0.2,
                    20,
                    &opts,
                    &list,
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, transforms, eps_sweep);
criterion_main!(benches);
