use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use schlab_core::meander::{sample_meander, sample_u_r_on_grid};
use schlab_core::measures::PathSampler;
use schlab_core::{Integrator, NonlinSpec, RegLevel, SimConfig, SpectralField, StreamKey, Transform};

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("transform");
    for (n, m) in [(64, 128), (256, 512)] {
        let t = Transform::new(n, m).unwrap();
        let h = SpectralField::new((0..n).map(|i| 1.0 / (1.0 + i as f64)).collect()).unwrap();
        let grid = t.to_grid(&h).unwrap();
        g.bench_with_input(BenchmarkId::new("to_grid", m), &h, |b, h| b.iter(|| t.to_grid(black_box(h)).unwrap()));
        g.bench_with_input(BenchmarkId::new("to_spectral", m), &grid, |b, x| b.iter(|| t.to_spectral(black_box(x)).unwrap()));
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    for (name, spec) in [("log", NonlinSpec::Log), ("power2", NonlinSpec::power(2.0).unwrap())] {
        let n = RegLevel::new(8).unwrap();
        let it = Integrator::new(SimConfig::new(64, 128, 1e-4, 1.0, spec, n).with_mean(2.0)).unwrap();
        let mut ws = it.workspace();
        let mut rng = StreamKey::new(1).rng(0);
        let mut x = PathSampler::new(2.0, 64, 128).unwrap().projected().draw(&mut rng).coeffs;
        g.bench_function(name, |b| b.iter(|| it.step(black_box(&mut x), &mut ws, &mut rng)));
    }
    g.finish();
}

fn meander(c: &mut Criterion) {
    let mut g = c.benchmark_group("meander");
    let mut rng = StreamKey::new(2).rng(0);
    g.bench_function("imhof_128", |b| b.iter(|| sample_meander(black_box(128), &mut rng).unwrap()));
    g.bench_function("u_r_grid_128", |b| b.iter(|| sample_u_r_on_grid(black_box(0.3), 128, &mut rng).unwrap()));
    g.finish();
}

criterion_group!(benches, transform, step, meander);
criterion_main!(benches);
