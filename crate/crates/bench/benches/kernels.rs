use criterion::{black_box, criterion_group, criterion_main, Criterion};

use chazy_core::blowup::{linearized_flow_exact, to_blowup, vector_field, EquilibriumPoint, ManifoldParams};
use chazy_core::integrator::{integrate, IntegrateOptions};
use chazy_core::kepler::kepler_state;
use chazy_core::scattering::{dbar_kernel, delta_a, planar_perp, scattering_map_with, ScatterOptions};
use chazy_core::{KeplerOrbit, MassSystem, ToleranceSet};

fn equilateral() -> (MassSystem, EquilibriumPoint) {
    let sys = MassSystem::new(vec![1.0, 1.0, 1.0], 2).unwrap();
    let s0 = sys.polygon_shape();
    let p = EquilibriumPoint::new(s0, -(2.0f64).sqrt(), &sys).unwrap();
    (sys, p)
}

fn field(c: &mut Criterion) {
    let o = KeplerOrbit::new(2.0, 2.0, 2.0, 2.0).unwrap();
    let sys = o.system();
    let (q, xi) = kepler_state(&o, 0.3);
    let x = to_blowup(&q, &xi, &sys).unwrap();
    c.bench_function("vector_field_kepler", |b| b.iter(|| vector_field(black_box(&x), &sys).unwrap()));
    let (sys3, p) = equilateral();
    c.bench_function("linearized_flow_exact_3body", |b| b.iter(|| linearized_flow_exact(black_box(&p), 0.7, &sys3).unwrap()));
}

fn pipelines(c: &mut Criterion) {
    let tol = ToleranceSet::default();
    let o = KeplerOrbit::new(2.0, 2.0, 2.0, 2.0).unwrap();
    let sys = o.system();
    let (q, xi) = kepler_state(&o, 0.0);
    let x0 = to_blowup(&q, &xi, &sys).unwrap();
    c.bench_function("integrate_kepler_to_equilibrium", |b| {
        b.iter(|| integrate(black_box(&x0), (0.0, 30.0), &tol, &sys, &IntegrateOptions::to_equilibrium(2.0)).unwrap())
    });

    let (sys3, p) = equilateral();
    let eta = planar_perp(&p.s0, &sys3);
    let mp = ManifoldParams::new(p.clone(), &eta * 2.0, 1e-3, &sys3).unwrap();
    let mut group = c.benchmark_group("scattering_3body");
    group.sample_size(20);
    group.bench_function("single_scale", |b| {
        b.iter(|| scattering_map_with(black_box(&mp), &tol, &sys3, &ScatterOptions::at_scale(1e-6)).unwrap())
    });
    group.bench_function("richardson", |b| {
        b.iter(|| scattering_map_with(black_box(&mp), &tol, &sys3, &ScatterOptions::refined(1e-6)).unwrap())
    });
    group.finish();
}

fn first_order(c: &mut Criterion) {
    let (sys, p) = equilateral();
    let xi = -&p.s0;
    let eta = planar_perp(&xi, &sys);
    c.bench_function("delta_a_quadrature", |b| b.iter(|| delta_a(black_box(&xi), 1.0, &eta, 1.0, &sys).unwrap()));
    c.bench_function("dbar_kernel_3body", |b| b.iter(|| dbar_kernel(black_box(&xi), &sys, 1e-8).unwrap()));
}

criterion_group!(benches, field, pipelines, first_order);
criterion_main!(benches);
