use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kfplab_bench::{constant_model, scenario};
use kfplab_core::kernel::{covariance, gamma, QuadratureSpec};
use kfplab_core::moduli::{m_transform, u_mu_transform};
use kfplab_core::representation::{cauchy_solve, repr_field, ReprKind};
use kfplab_core::verify::{run_check, CheckId};
use kfplab_core::{Modulus, ModelStructure};

fn kernel(c: &mut Criterion) {
    let model = constant_model(&[1, 1], 1.0);
    c.bench_function("gamma 2d", |b| b.iter(|| gamma(&model, black_box(&[0.3, -0.2]), 1.0, &[0.0, 0.1], 0.0)));
    let model3 = constant_model(&[2, 2, 2], 1.0);
    c.bench_function("covariance 6d", |b| b.iter(|| covariance(&model3, black_box(0.7), 0.0)));
    let ws = covariance(&model, 1.0, 0.0).unwrap();
    c.bench_function("gamma workspace 2d", |b| b.iter(|| ws.gamma(black_box(&[0.3, -0.2]), &[0.0, 0.1])));
}

fn moduli(c: &mut Criterion) {
    let w = Modulus::power(1.0, 0.5).unwrap();
    let s = ModelStructure::build(&[1, 1], None).unwrap();
    c.bench_function("M transform", |b| b.iter(|| m_transform(&w, black_box(0.1))));
    c.bench_function("U^mu transform", |b| b.iter(|| u_mu_transform(&w, 0.25, black_box(0.1), &s)));
}

fn representation(c: &mut Criterion) {
    let model = constant_model(&[1, 1], 1.0);
    let f = |y: &[f64]| (-y[0] * y[0] - y[1] * y[1]).exp();
    let spec = QuadratureSpec::default();
    c.bench_function("cauchy solve", |b| b.iter(|| cauchy_solve(&model, &f, 0.0, black_box(&[0.1, 0.2]), 0.5, &spec)));

    let sc = scenario("kolmogorov_1934.json");
    let time_only = sc.coefficients.without_perturbation();
    let src = &sc.sources[0];
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("T_00 one point", |b| {
        b.iter(|| repr_field(&time_only, src, ReprKind::Hessian(0, 0), &[(vec![0.1, 0.0], 1.0)], &sc.repr))
    });
    group.bench_function("residual check", |b| b.iter(|| run_check(&sc, CheckId::LgammaResidual)));
    group.finish();
}

criterion_group!(benches, kernel, moduli, representation);
criterion_main!(benches);
