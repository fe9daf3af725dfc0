use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use shortfall_core::{verifier, ModelParams, SimConfig, Simulator, Solver};

fn closed_form(c: &mut Criterion) {
    let s = Solver::new(ModelParams::baseline()).unwrap();
    c.bench_function("solver_new", |b| b.iter(|| Solver::new(black_box(ModelParams::baseline())).unwrap()));
    let d = s.dual().slice(1.0).unwrap();
    c.bench_function("dual_jet", |b| b.iter(|| d.jet(black_box(0.8)).unwrap()));
    c.bench_function("boundary_curves", |b| b.iter(|| s.boundary_curves(black_box(1.3)).unwrap()));
}

fn inversion(c: &mut Criterion) {
    let s = Solver::new(ModelParams::baseline()).unwrap();
    let slice = s.slice(1.0).unwrap();
    let mut g = c.benchmark_group("invert");
    for x in [2.6, 3.5, 8.0, 15.0] {
        let region = slice.classify(x).unwrap();
        let (_, y) = slice.dual_point(x).unwrap();
        g.bench_with_input(BenchmarkId::new("cold", x), &x, |b, &x| {
            b.iter(|| slice.invert(black_box(x), region, None).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("warm", x), &x, |b, &x| {
            b.iter(|| slice.invert(black_box(x * (1.0 + 1e-4)), region, Some(y)).unwrap())
        });
    }
    g.finish();
    c.bench_function("h_tilde", |b| b.iter(|| s.h_tilde(black_box(30.0)).unwrap()));
    c.bench_function("h_tilde_from", |b| b.iter(|| s.h_tilde_from(black_box(30.0), 1.4).unwrap()));
    c.bench_function("optimal_controls", |b| b.iter(|| s.optimal_controls(black_box(3.5), 1.0).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 1.0,
        ..SimConfig::default()
    };
    let sim = Simulator::new(ModelParams::baseline(), cfg).unwrap();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(20);
    g.bench_function("path_1000_steps", |b| b.iter(|| sim.simulate_path(3.5, 1.0, black_box(3)).unwrap()));
    let budget = Simulator::new(ModelParams::baseline(), SimConfig { n_paths: 10, ..cfg }).unwrap();
    g.bench_function("budget_10_paths_1000_steps", |b| b.iter(|| budget.budget_identity_mc(black_box(3.5), 1.0).unwrap()));
    g.finish();
}

fn verification(c: &mut Criterion) {
    let mut g = c.benchmark_group("verify");
    g.sample_size(10);
    g.bench_function("run_all", |b| b.iter(|| verifier::run_all(black_box(&ModelParams::baseline())).unwrap()));
    g.finish();
}

criterion_group!(benches, closed_form, inversion, simulation, verification);
criterion_main!(benches);
