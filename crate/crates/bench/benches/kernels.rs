use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use mvsde::measure::convolve_all;
use mvsde::schemes::{euler_step, ssm_step, taming_step, SolverConfig, Taming};
use mvsde_bench::{double_well, increments, start};

fn convolution(c: &mut Criterion) {
    let model = double_well();
    let mut g = c.benchmark_group("convolution");
    for n in [250, 1000] {
        let x = start(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| convolve_all(model.f(), black_box(x)).unwrap())
        });
    }
    g.finish();
}

fn steps(c: &mut Criterion) {
    let model = double_well();
    let h = 0.01;
    let cfg = SolverConfig::default();
    let mut g = c.benchmark_group("step");
    g.sample_size(20);
    for n in [250, 1000] {
        let x = start(n, 1);
        let dw = increments(n, h);
        g.bench_with_input(BenchmarkId::new("ssm", n), &x, |b, x| {
            b.iter(|| ssm_step(&model, black_box(x), &dw, 0.0, h, &cfg).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("taming-out", n), &x, |b, x| {
            b.iter(|| taming_step(&model, black_box(x), &dw, 0.0, h, 0.5, 100, Taming::Out).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("euler", n), &x, |b, x| {
            b.iter(|| euler_step(&model, black_box(x), &dw, 0.0, h).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, convolution, steps);
criterion_main!(benches);
