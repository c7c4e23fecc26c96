use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use facereg_bench::{head, moved, posed_head};
use facereg_core::lift::forward_project;
use facereg_core::{
    icp_refine, lift_landmark, render_projection, select_subsurface, solve_landmark_transform, surface_error, AnglePair,
    IcpConfig, ProjectionConfig,
};

fn lifting(c: &mut Criterion) {
    let h = head(1.0, 0);
    let angles = AnglePair::default();
    let obs: Vec<(f64, f64, f64)> = h
        .surface
        .points()
        .iter()
        .take(10_000)
        .map(|p| (forward_project(p, angles.phi1()), forward_project(p, angles.phi2()), p.z))
        .collect();
    c.bench_function("lift 10k points", |b| {
        b.iter(|| {
            for &(x1, x2, z) in &obs {
                black_box(lift_landmark(x1, x2, z, &angles).ok());
            }
        })
    });
}

fn landmark_solve(c: &mut Criterion) {
    let la = head(1.0, 0).landmarks;
    let lb = moved(&la);
    c.bench_function("landmark solve, 10 points", |b| b.iter(|| solve_landmark_transform(black_box(&la), black_box(&lb))));
}

fn render(c: &mut Criterion) {
    let h = head(2.0, 0);
    let cfg = ProjectionConfig::default();
    c.bench_function("render 1024x1024", |b| b.iter(|| render_projection(&h.surface, PI / 9.0, &cfg).unwrap()));
}

fn icp(c: &mut Criterion) {
    let a = head(2.0, 0);
    let b = posed_head(2.0, 1);
    let sub_a = select_subsurface(&a.surface, &a.landmarks, 25.0).unwrap();
    let sub_b = select_subsurface(&b.surface, &b.landmarks, 25.0).unwrap();
    let t0 = solve_landmark_transform(&a.landmarks, &b.landmarks).unwrap();
    let cfg = IcpConfig::default();
    let mut g = c.benchmark_group("registration");
    g.sample_size(10);
    g.bench_function("icp on 25 mm sub-surfaces", |bch| bch.iter(|| icp_refine(&sub_a, &sub_b, &t0, &cfg).unwrap()));
    g.bench_function("surface error", |bch| bch.iter(|| surface_error(&sub_a, &sub_b).unwrap()));
    g.finish();
}

criterion_group!(benches, lifting, landmark_solve, render, icp);
criterion_main!(benches);
