use criterion::{black_box, criterion_group, criterion_main, Criterion};
use infolqg::equilibrium::solve_equilibrium;
use infolqg::hjb::{default_dt, value_iteration, Grid};
use infolqg::model::derive_coefficients;
use infolqg::riccati::integrate_variance;
use infolqg::simulator::mc_cost;
use infolqg::{FullValueModel, Model, Policy, RateSchedule, SimConfig, TimeGrid};

fn coefficients(c: &mut Criterion) {
    let model = Model::canonical();
    c.bench_function("derive_coefficients", |b| {
        b.iter(|| derive_coefficients(black_box(&model.params), &model.cost, 1.0).unwrap())
    });
}

fn variance(c: &mut Criterion) {
    let model = Model::canonical();
    let grid = TimeGrid::new(10.0, 1e-3).unwrap();
    c.bench_function("integrate_variance_10k", |b| {
        b.iter(|| integrate_variance(black_box(0.9), &RateSchedule::Constant(0.5), &grid, &model).unwrap())
    });
}

fn hjb(c: &mut Criterion) {
    let model = Model::canonical();
    let grid = Grid::for_model(&model, 1001).unwrap();
    let dt = default_dt(&grid, &model);
    let mut g = c.benchmark_group("value_iteration");
    g.sample_size(10);
    g.bench_function("n1001", |b| {
        b.iter(|| value_iteration(&grid, &model, dt, 1e-10).unwrap())
    });
    g.finish();
}

fn equilibrium(c: &mut Criterion) {
    let model = Model::canonical();
    c.bench_function("solve_equilibrium", |b| {
        b.iter(|| solve_equilibrium(black_box(&model), 1.0).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let model = Model::canonical();
    let grid = Grid::for_model(&model, 1001).unwrap();
    let fv = FullValueModel::new(value_iteration(&grid, &model, default_dt(&grid, &model), 1e-10).unwrap());
    let cfg = SimConfig {
        horizon: 2.0,
        n_paths: 256,
        ..SimConfig::default()
    };
    let mut g = c.benchmark_group("mc_cost");
    g.sample_size(10);
    g.bench_function("optimal_256x2000", |b| {
        b.iter(|| mc_cost(&cfg, Policy::Optimal, &fv).unwrap())
    });
    g.finish();
}

criterion_group!(benches, coefficients, variance, hjb, equilibrium, monte_carlo);
criterion_main!(benches);
