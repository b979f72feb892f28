use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use worldline::analytic::{eta_te, gamma_te};
use worldline::bridges::fill_vloop;
use worldline::engine::{estimate_casimir, estimate_cp, interp_frac_above, trap_frac_above, CpMode};
use worldline::quadrature::QuadOptions;
use worldline::sojourn::{mean, mgf_scaled, SojournParams};
use worldline::{DielectricProfile, PhysicalConstants, RngStreamSpec, RunConfig};

fn bridges(c: &mut Criterion) {
    let mut g = c.benchmark_group("vloop");
    for n in [100usize, 1000, 10_000] {
        let mut buf = vec![0.0; n + 1];
        let mut rng = RngStreamSpec::new(1, 0).rng();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| fill_vloop(&mut buf, &mut rng)));
    }
    g.finish();
}

fn fractions(c: &mut Criterion) {
    let mut buf = vec![0.0; 1001];
    fill_vloop(&mut buf, &mut RngStreamSpec::new(2, 0).rng());
    c.bench_function("trapezoid fraction N=1000", |b| b.iter(|| trap_frac_above(black_box(&buf), 0.1)));
    c.bench_function("interpolated fraction N=1000", |b| b.iter(|| interp_frac_above(black_box(&buf), 0.1)));
}

fn sojourn(c: &mut Criterion) {
    let q = SojournParams::new(0.1, -0.2, 1.0, 0.05).unwrap();
    c.bench_function("sojourn mean", |b| b.iter(|| mean(black_box(q))));
    let opts = QuadOptions::rel(1e-10).with_abs(1e-12);
    c.bench_function("segment mgf", |b| b.iter(|| mgf_scaled(black_box(0.3), -0.4, 2.0, opts).unwrap()));
}

fn oracles(c: &mut Criterion) {
    c.bench_function("eta_te closed form", |b| b.iter(|| eta_te(black_box(3.0)).unwrap()));
    c.bench_function("gamma_te quadrature", |b| b.iter(|| gamma_te(black_box(1.0), 1.0).unwrap()));
}

fn runs(c: &mut Criterion) {
    let k = PhysicalConstants::natural();
    let mut g = c.benchmark_group("runs");
    g.sample_size(10);
    let cp = RunConfig::new(DielectricProfile::half_space(1.0, 1.0).unwrap(), 1000, 10_000, 3);
    g.bench_function("cp vacuum 1e4 paths N=1000", |b| b.iter(|| estimate_cp(&cp, &k, CpMode::Vacuum).unwrap()));
    let gap = RunConfig::new(DielectricProfile::gap(0.0, 1.0, 1.0, 1.0).unwrap(), 1000, 10_000, 4);
    g.bench_function("casimir 1e4 paths N=1000", |b| b.iter(|| estimate_casimir(&gap, &k).unwrap()));
    g.finish();
}

criterion_group!(benches, bridges, fractions, sojourn, oracles, runs);
criterion_main!(benches);
