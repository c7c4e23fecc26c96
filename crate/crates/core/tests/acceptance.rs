//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use facereg_core::error::Error;
use facereg_core::ingest::{extract_isosurface, Orientation, ScalarVolume};
use facereg_core::lift::{lift_landmark, AnglePair, LandmarkSet3D};
use facereg_core::pipeline::{run_register, write_synthetic, InputConfig, PipelineConfig, SurfaceInput, METRICS_FILE, TRANSFORM_FILE};
use facereg_core::registration::{icp_refine, solve_landmark_transform, IcpConfig, TransformRecord};
use facereg_core::synth::{
    default_sweep_epsilons, lifting_noise_sweep, log_log_slope, run_angle_sweep, run_end_to_end, SweepConfig,
    SyntheticHeadSpec, EndToEndConfig,
};
use facereg_core::{apply_transform, point_error, signed_distance, surface_error, Point3, RigidTransform, SurfacePointSet, UnitVector3, Vector3};
use nalgebra::{Rotation3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 10_000 {
        let phi1: f64 = rng.random_range(-PI / 3.0..PI / 3.0);
        let phi2: f64 = rng.random_range(-PI / 3.0..PI / 3.0);
        if (phi1 - phi2).abs() < PI / 90.0 {
            continue;
        }
        let r = 200.0 * rng.random::<f64>().sqrt();
        let a = rng.random_range(-PI..PI);
        let p = Point3::new(r * a.cos(), r * a.sin(), rng.random_range(-150.0..150.0));
        let view = |phi: f64| Rotation3::from_axis_angle(&Vector3::z_axis(), phi) * p;
        let (v1, v2) = (view(phi1), view(phi2));
        if v1.y < 0.0 || v2.y < 0.0 {
            continue;
        }
        let angles = AnglePair::new(phi1, phi2).map_err(|e| e.to_string())?;
        let q = lift_landmark(v1.x, v2.x, p.z, &angles).map_err(|e| format!("lift failed at {p:?}: {e}"))?;
        worst = worst.max((q - p).norm());
        n += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 5.0,
        format!("max error {worst:.2e} mm over {n} points, {secs:.2} s"),
    )
}

fn noise_slope() -> Outcome {
    let start = Instant::now();
    let eps = [PI / 90.0, PI / 60.0, PI / 36.0, PI / 24.0, PI / 18.0];
    let point = Point3::new(0.0, 100.0, 0.0);
    let sigma = 0.5;
    let rows = lifting_noise_sweep(&point, &eps, sigma, 500, 0).map_err(|e| e.to_string())?;
    let medians: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let slope = log_log_slope(&eps, &medians);

    // First-order prediction from L² = (x1² + x2² − 2·x1·x2·cos ε) / sin² ε.
    let e = PI / 36.0;
    let (x1, x2) = (-100.0 * (e / 2.0).sin(), 100.0 * (e / 2.0).sin());
    let l = (x1 * x1 + x2 * x2 - 2.0 * x1 * x2 * e.cos()).sqrt() / e.sin();
    let g1 = (x1 - x2 * e.cos()) / (l * e.sin().powi(2));
    let g2 = (x2 - x1 * e.cos()) / (l * e.sin().powi(2));
    let predicted = sigma * g1.hypot(g2) * (2.0 / PI).sqrt();
    let measured = rows[2].2;
    let rel = (measured - predicted).abs() / predicted;
    let secs = start.elapsed().as_secs_f64();
    check(
        (slope + 1.0).abs() <= 0.2 && rel <= 0.25 && secs < 30.0,
        format!(
            "slope {slope:.3}; mean |L-L^| at pi/36 {measured:.3} mm vs first-order {predicted:.3} mm ({:.1}%), {secs:.2} s",
            100.0 * rel
        ),
    )
}

fn u_shape() -> Outcome {
    let start = Instant::now();
    let cfg = SweepConfig::default();
    let res = run_angle_sweep(&SyntheticHeadSpec::default(), &cfg).map_err(|e| e.to_string())?;
    let med = |e: f64| res.row(e, 1.0).map(|r| r.median_e_poi_mm).unwrap_or(f64::NAN);
    let grid = default_sweep_epsilons();
    let (lo, best, hi) = (med(PI / 18.0), med(2.0 * PI / 9.0), med(4.0 * PI / 9.0));
    let min = grid.iter().map(|&e| med(e)).fold(f64::INFINITY, f64::min);
    let curve: Vec<String> = grid.iter().map(|&e| format!("{:.2}", med(e))).collect();
    check(
        best < lo && best < hi && best <= 1.1 * min,
        format!(
            "median E_poi by k*pi/18, k=1..8: [{}] mm; 2pi/9 = {best:.3}, min = {min:.3}, {} trials, {:.1} s",
            curve.join(", "),
            cfg.trials,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q)
}

fn indexed(points: &[Point3]) -> LandmarkSet3D {
    LandmarkSet3D::new(points.iter().enumerate().map(|(i, p)| (i as u32, *p))).unwrap()
}

fn landmark_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_r, mut worst_t): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let rot = random_rotation(&mut rng);
        let t = Vector3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let src: Vec<Point3> = (0..6)
            .map(|_| Point3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)))
            .collect();
        let dst: Vec<Point3> = src.iter().map(|p| rot * p + t).collect();
        let got = solve_landmark_transform(&indexed(&src), &indexed(&dst)).map_err(|e| e.to_string())?;
        let dr = UnitQuaternion::from_matrix(got.rotation()).angle_to(&rot);
        worst_r = worst_r.max(dr);
        worst_t = worst_t.max((got.translation() - t).norm());
    }
    let line = indexed(&(0..3).map(|i| Point3::new(1.0 + 2.0 * i as f64, -3.0 * i as f64, 0.5 * i as f64)).collect::<Vec<_>>());
    let first = solve_landmark_transform(&line, &line).map(|_| ()).map_err(|e| e.to_string());
    let second = solve_landmark_transform(&line, &line).map(|_| ()).map_err(|e| e.to_string());
    let rejected = matches!(solve_landmark_transform(&line, &line), Err(Error::DegenerateConfiguration(_))) && first == second;
    check(
        worst_r <= 1e-9 && worst_t <= 1e-9 && rejected,
        format!("1000 motions: max rotation error {worst_r:.2e} rad, max translation error {worst_t:.2e} mm; collinear rejected: {rejected}"),
    )
}

fn jittered_patch(step: f64, seed: u64) -> SurfacePointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (76.0 / step).round() as usize;
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            let x = -38.0 + (i as f64 + rng.random::<f64>()) * step;
            let z = -38.0 + (k as f64 + rng.random::<f64>()) * step;
            let bump = 6.0 * (-((x - 8.0).powi(2) + (z + 5.0).powi(2)) / 60.0).exp();
            pts.push(Point3::new(x, 40.0 - x * x / 90.0 - z * z / 40.0 + bump, z));
        }
    }
    SurfacePointSet::new(pts).unwrap()
}

fn icp() -> Outcome {
    let start = Instant::now();
    let mut worst_rise: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = jittered_patch(5.0, seed);
        let dst_base = jittered_patch(4.0, seed + 1000);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), 1.0, rng.random_range(-1.0..1.0));
        let motion = RigidTransform::from_axis_angle(
            axis,
            rng.random_range(-0.2..0.2),
            Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
        );
        let dst = apply_transform(&motion, &dst_base).map_err(|e| e.to_string())?;
        let r = icp_refine(&src, &dst, &RigidTransform::identity(), &IcpConfig::default()).map_err(|e| e.to_string())?;
        for w in r.residuals.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    let monotone = worst_rise <= 1e-12;

    let base = jittered_patch(1.0, 9);
    let src = base.filter_indices(|i| {
        let p = base.points()[i];
        p.x.abs() < 28.0 && p.z.abs() < 28.0
    });
    let truth = RigidTransform::from_axis_angle(Vector3::new(0.2, 0.1, 1.0), 5f64.to_radians(), Vector3::new(2.0, 0.0, 0.0));
    let dst = apply_transform(&truth, &base).map_err(|e| e.to_string())?;
    let cfg = IcpConfig {
        max_iterations: 300,
        tolerance: 1e-12,
        ..Default::default()
    };
    let known = icp_refine(&src, &dst, &RigidTransform::identity(), &cfg).map_err(|e| e.to_string())?;
    let known_e = known.final_metrics.e_mean;

    let (mut lm, mut fin) = (0.0, 0.0);
    let mut wins = 0;
    let trials = 20;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
        let pose = RigidTransform::from_axis_angle(
            Vector3::new(rng.random_range(-0.3..0.3), 1.0, rng.random_range(-0.3..0.3)),
            rng.random_range(-0.08..0.08),
            Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
        );
        let a = SyntheticHeadSpec {
            density: 2.0,
            seed: i,
            ..Default::default()
        };
        let b = SyntheticHeadSpec {
            seed: 1000 + i,
            pose: Some(TransformRecord::from(&pose)),
            ..a.clone()
        };
        let e2e = EndToEndConfig {
            noise_sigma_px: 1.0,
            seed: i,
            ..Default::default()
        };
        let rep = run_end_to_end(&a, &b, &e2e).map_err(|e| e.to_string())?;
        let (x, y) = (rep.registration.initial_metrics.e_mean, rep.registration.final_metrics.e_mean);
        lm += x;
        fin += y;
        wins += usize::from(y < x);
    }
    let (lm, fin) = (lm / trials as f64, fin / trials as f64);
    check(
        monotone && known_e < 1e-6 && fin < lm,
        format!(
            "(a) max residual rise {worst_rise:.1e} over 100 problems; (b) 5 deg + 2 mm final E_mean {known_e:.2e} mm; \
             (c) mean E_mean landmark-only {lm:.4} mm vs landmark+ICP {fin:.4} mm ({wins}/{trials} improved); {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn brute_nearest(p: &Point3, set: &[Point3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, q) in set.iter().enumerate() {
        let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
        let d = (dx * dx + dy * dy + dz * dz).sqrt();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point3>, Vec<UnitVector3>) {
    let pts = (0..n)
        .map(|_| Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-10.0..10.0)))
        .collect();
    let normals = (0..n)
        .map(|_| Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), 1.0, rng.random_range(-1.0..1.0))))
        .collect();
    (pts, normals)
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (xp, _) = random_cloud(&mut rng, 500);
    let (yp, yn) = random_cloud(&mut rng, 500);
    let x = SurfacePointSet::new(xp.clone()).unwrap();
    let y = SurfacePointSet::with_normals(yp.clone(), yn.clone()).unwrap();
    let r = surface_error(&x, &y).map_err(|e| e.to_string())?;
    let d: Vec<f64> = xp.iter().map(|p| brute_nearest(p, &yp).1).collect();
    let sup = d.iter().copied().fold(0.0, f64::max);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let surface_exact = r.distances == d && r.e_sup == sup && r.e_mean == mean;

    let signed = signed_distance(&y, &x).map_err(|e| e.to_string())?;
    let expected: Vec<f64> = yp
        .iter()
        .zip(&yn)
        .map(|(p, n)| {
            let (j, d) = brute_nearest(p, &xp);
            if (xp[j] - p).dot(n) < 0.0 {
                -d
            } else {
                d
            }
        })
        .collect();
    let signed_exact = signed == expected;

    let mut ordered = true;
    for k in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
        let n = rng.random_range(1..60);
        let m = rng.random_range(1..60);
        let a = SurfacePointSet::new(random_cloud(&mut rng, n).0).unwrap();
        let b = SurfacePointSet::new(random_cloud(&mut rng, m).0).unwrap();
        let r = surface_error(&a, &b).map_err(|e| e.to_string())?;
        ordered &= r.e_sup >= r.e_mean;
    }

    let a = LandmarkSet3D::new([(1, Point3::origin()), (2, Point3::new(10.0, 0.0, 0.0))]).unwrap();
    let b = LandmarkSet3D::new([(1, Point3::new(0.0, 3.0, 0.0)), (2, Point3::new(10.0, 0.0, 4.0))]).unwrap();
    let e_poi = point_error(&a, &b).map_err(|e| e.to_string())?;
    let hand = ((9.0 + 16.0) / 2.0f64).sqrt();
    check(
        surface_exact && signed_exact && ordered && (e_poi - hand).abs() < 1e-15,
        format!(
            "surface_error exact: {surface_exact}; signed_distance exact: {signed_exact}; e_sup >= e_mean on 200 inputs: {ordered}; \
             E_poi {e_poi:.6} vs sqrt(12.5) {hand:.6}"
        ),
    )
}

fn isosurface() -> Outcome {
    let (n, h, radius) = (64usize, 1.0, 25.0);
    let c = 0.5 * (n - 1) as f64 * h;
    let center = Point3::new(c, c, c);
    // HU-like ramp: tissue (> −500) inside, air outside, 100 HU per mm.
    let vol = ScalarVolume::from_fn([n; 3], [h; 3], Point3::origin(), |p| -500.0 + 100.0 * (radius - (p - center).norm()))
        .map_err(|e| e.to_string())?;
    let mesh = extract_isosurface(&vol, -500.0, Orientation::TowardBelow).map_err(|e| e.to_string())?;
    let worst = mesh
        .vertices()
        .iter()
        .map(|v| ((v - center).norm() - radius).abs())
        .fold(0.0, f64::max);
    let bound = 0.5 * 3f64.sqrt() * h;
    let area = mesh.area();
    let exact = 4.0 * PI * radius * radius;
    let rel = (area - exact).abs() / exact;
    check(
        worst <= bound && rel <= 0.02,
        format!(
            "{} vertices, max radial error {worst:.4} (bound {bound:.4}); area {area:.1} vs {exact:.1} ({:.2}%)",
            mesh.vertices().len(),
            100.0 * rel
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let pose = RigidTransform::from_axis_angle(Vector3::new(0.1, 1.0, -0.2), 0.06, Vector3::new(3.0, -2.0, 1.0));
    let a = SyntheticHeadSpec {
        density: 2.0,
        ..Default::default()
    };
    let b = SyntheticHeadSpec {
        seed: 1,
        pose: Some(TransformRecord::from(&pose)),
        ..a.clone()
    };
    write_synthetic(&a, &root.join("a")).map_err(|e| e.to_string())?;
    write_synthetic(&b, &root.join("b")).map_err(|e| e.to_string())?;
    let input = |s: &str| SurfaceInput {
        surface: Some(root.join(s).join("surface.ply")),
        volume: None,
        landmarks: Some(root.join(s).join("landmarks.json")),
    };
    let mut cfg = PipelineConfig {
        inputs: InputConfig {
            a: input("a"),
            b: input("b"),
            ..Default::default()
        },
        seed: 17,
        ..Default::default()
    };
    cfg.detector.noise_sigma_px = 1.0;
    let mut runs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for k in 0..2 {
        let out: PathBuf = root.join(format!("run{k}"));
        cfg.output_dir = out.clone();
        run_register(&cfg).map_err(|e| e.to_string())?;
        let read = |f: &str| fs::read(out.join(f)).map_err(|e| e.to_string());
        runs.push((read(TRANSFORM_FILE)?, read(METRICS_FILE)?));
    }
    let same = runs[0] == runs[1];
    check(
        same,
        format!(
            "two register runs, seed 17, sigma 1 px: transform.json ({} B) and metrics.json ({} B) identical: {same}",
            runs[0].0.len(),
            runs[0].1.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("lifting round trip", round_trip),
        ("noise slope in epsilon", noise_slope),
        ("angle sweep U-shape", u_shape),
        ("landmark rigid solver", landmark_solver),
        ("ICP properties", icp),
        ("metrics oracle equivalence", metrics),
        ("sphere isosurface", isosurface),
        ("register determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
