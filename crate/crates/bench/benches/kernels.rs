use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use homlab_core::diffusion::{simulate_path, PathConfig};
use homlab_core::environment::sample_environment;
use homlab_core::kernels::{gaussian_step, scaled_holder_norm, solve_quenched};
use homlab_core::renorm::FourierField;
use homlab_core::{Cube, EnvironmentSpec, Grid, GridField, SolverParams};

fn quenched_solve(c: &mut Criterion) {
    let spec = Arc::new(EnvironmentSpec::new(2, 0.1, 1));
    let env = sample_environment(&spec, 7, Cube::centered(2, 30.0)).unwrap();
    let grid = Grid::cube(vec![0.0; 2], 20.0, 0.25).unwrap();
    let f = FourierField::sample(2, 16, 2.0, 3).on_grid(&grid);
    let params = SolverParams::new(0.25);
    c.bench_function("solve_quenched d=2 h=0.25 t=1", |b| {
        b.iter(|| solve_quenched(&env, black_box(&f), 1.0, &params).unwrap())
    });
}

fn sde_path(c: &mut Criterion) {
    let spec = Arc::new(EnvironmentSpec::new(3, 0.1, 1));
    let env = sample_environment(&spec, 7, Cube::centered(3, 60.0)).unwrap();
    let cfg = PathConfig::new(0.01, 10.0, vec![0.0; 3]);
    let mut seed = 0u64;
    c.bench_function("simulate_path d=3 1000 steps", |b| {
        b.iter(|| {
            seed += 1;
            simulate_path(&env, &cfg, black_box(seed)).unwrap()
        })
    });
}

fn holder_and_gaussian(c: &mut Criterion) {
    let grid = Grid::cube(vec![0.0; 2], 10.0, 0.25).unwrap();
    let f: GridField = FourierField::sample(2, 16, 1.5, 5).on_grid(&grid);
    c.bench_function("scaled_holder_norm 81x81", |b| {
        b.iter(|| scaled_holder_norm(black_box(&f), 2.0, 0.5))
    });
    c.bench_function("gaussian_step s=1 81x81", |b| {
        b.iter(|| gaussian_step(black_box(&f), 1.0).unwrap())
    });
}

criterion_group!(benches, quenched_solve, sde_path, holder_and_gaussian);
criterion_main!(benches);
