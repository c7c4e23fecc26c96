//! Synthetic head surfaces with analytic landmarks, and the benchmark
//! experiments built on them: the angle sweep, the lifting noise sweep and
//! the end-to-end registration run.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{oracle_detect_visible, oracle_project_landmarks, LandmarkSet2D, DEFAULT_SUBSET};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, Point3, RigidTransform, SurfacePointSet, UnitVector3, Vector3};
use crate::lift::{forward_project, lift_landmark, lift_landmark_set, AnglePair, LandmarkSet3D};
use crate::metrics::point_error;
use crate::registration::{
    icp_refine, select_subsurface, solve_landmark_transform, IcpConfig, RegistrationReport,
    TransformRecord, DEFAULT_SUBSURFACE_RADIUS,
};
use crate::render::{render_projection, ProjectionConfig, ProjectionImage};

/// Deterministic generator for one `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A Gaussian dent or bump `amplitude·exp(−r²/2w²)` centred at `(x, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

impl Blob {
    fn value(&self, x: f64, z: f64) -> f64 {
        let (dx, dz) = (x - self.center[0], z - self.center[1]);
        self.amplitude * (-(dx * dx + dz * dz) / (2.0 * self.width * self.width)).exp()
    }
}

/// Named analytic landmark at `(x, z)` on the height field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSite {
    pub index: u32,
    pub name: String,
    pub at: [f64; 2],
}

/// Frontal half of an ellipsoid `(x/a)² + (y/b)² + (z/c)² = 1` facing +y,
/// with a nose ridge, alar bumps and eye-socket dents added to its height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticHeadSpec {
    pub semi_axes: [f64; 3],
    pub nose_amplitude: f64,
    /// Gaussian width of the ridge across x.
    pub nose_width: f64,
    /// Ridge height falls to this fraction of the tip at the bridge.
    pub nose_bridge_fraction: f64,
    /// z of the top of the ridge.
    pub nose_top: f64,
    pub alar: Vec<Blob>,
    /// Depressions; positive amplitude digs into the surface.
    pub eye_sockets: Vec<Blob>,
    pub landmarks: Vec<LandmarkSite>,
    /// Sampling density in points per mm² of the (x, z) footprint.
    pub density: f64,
    /// Keep samples with `(x/a)² + (z/c)² ≤ mask`.
    pub mask: f64,
    /// Isotropic Gaussian noise added to sample positions, mm.
    pub noise_mm: f64,
    /// Optional `[z_min, z_max]` crop applied before the pose.
    pub crop_z: Option<[f64; 2]>,
    /// Rigid pose applied to the surface and the landmarks.
    pub pose: Option<TransformRecord>,
    pub seed: u64,
}

fn site(index: u32, name: &str, x: f64, z: f64) -> LandmarkSite {
    LandmarkSite {
        index,
        name: name.to_string(),
        at: [x, z],
    }
}

impl Default for SyntheticHeadSpec {
    fn default() -> Self {
        Self {
            semi_axes: [75.0, 100.0, 110.0],
            nose_amplitude: 18.0,
            nose_width: 7.0,
            nose_bridge_fraction: 0.3,
            nose_top: 45.0,
            alar: vec![
                Blob {
                    center: [-12.0, -6.0],
                    amplitude: 6.0,
                    width: 5.0,
                },
                Blob {
                    center: [12.0, -6.0],
                    amplitude: 6.0,
                    width: 5.0,
                },
            ],
            eye_sockets: vec![
                Blob {
                    center: [-30.0, 38.0],
                    amplitude: 5.0,
                    width: 10.0,
                },
                Blob {
                    center: [30.0, 38.0],
                    amplitude: 5.0,
                    width: 10.0,
                },
            ],
            landmarks: vec![
                site(27, "nose_root", 0.0, 40.0),
                site(28, "nose_bridge_upper", 0.0, 27.0),
                site(29, "nose_bridge_lower", 0.0, 14.0),
                site(30, "nose_tip", 0.0, 0.0),
                site(31, "nostril_right", -13.0, -10.0),
                site(33, "subnasale", 0.0, -12.0),
                site(35, "nostril_left", 13.0, -10.0),
                site(36, "eye_outer_right", -45.0, 38.0),
                site(39, "eye_inner_right", -18.0, 38.0),
                site(42, "eye_inner_left", 18.0, 38.0),
            ],
            density: 4.0,
            mask: 0.9,
            noise_mm: 0.0,
            crop_z: None,
            pose: None,
            seed: 0,
        }
    }
}

impl SyntheticHeadSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.semi_axes.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("semi_axes {:?} must be positive", self.semi_axes)));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Config(format!("density {} must be positive", self.density)));
        }
        if !(self.mask > 0.0 && self.mask < 1.0) {
            return Err(Error::Config(format!("mask {} must lie in (0, 1)", self.mask)));
        }
        if !(self.nose_width > 0.0) || self.alar.iter().chain(&self.eye_sockets).any(|b| !(b.width > 0.0)) {
            return Err(Error::Config("feature widths must be positive".into()));
        }
        if !(self.noise_mm >= 0.0) {
            return Err(Error::Config(format!("noise_mm {} must be >= 0", self.noise_mm)));
        }
        for l in &self.landmarks {
            if !self.in_mask(l.at[0], l.at[1]) {
                return Err(Error::Config(format!("landmark {} ({}) lies outside the surface", l.index, l.name)));
            }
        }
        if let Some(p) = &self.pose {
            p.to_transform().map_err(|e| Error::Config(format!("pose: {e}")))?;
        }
        Ok(())
    }

    fn in_mask(&self, x: f64, z: f64) -> bool {
        let [a, _, c] = self.semi_axes;
        (x / a).powi(2) + (z / c).powi(2) <= self.mask
    }

    fn ridge_profile(&self, z: f64) -> f64 {
        if z <= 0.0 {
            (-z * z / (2.0 * 6.0 * 6.0)).exp()
        } else {
            let f = self.nose_bridge_fraction;
            let body = f + (1.0 - f) * (-z * z / (2.0 * 20.0 * 20.0)).exp();
            let over = (z - self.nose_top).max(0.0);
            body * (-over * over / (2.0 * 8.0 * 8.0)).exp()
        }
    }

    /// Height `y(x, z)` of the surface in the head frame.
    pub fn height(&self, x: f64, z: f64) -> f64 {
        let [a, b, c] = self.semi_axes;
        let base = b * (1.0 - (x / a).powi(2) - (z / c).powi(2)).max(0.0).sqrt();
        let ridge = self.nose_amplitude * (-x * x / (2.0 * self.nose_width * self.nose_width)).exp() * self.ridge_profile(z);
        let alar: f64 = self.alar.iter().map(|blob| blob.value(x, z)).sum();
        let dents: f64 = self.eye_sockets.iter().map(|blob| blob.value(x, z)).sum();
        base + ridge + alar - dents
    }

    /// Outward unit normal at `(x, z)` from central differences of the height.
    pub fn normal(&self, x: f64, z: f64) -> UnitVector3 {
        const H: f64 = 1e-5;
        let hx = (self.height(x + H, z) - self.height(x - H, z)) / (2.0 * H);
        let hz = (self.height(x, z + H) - self.height(x, z - H)) / (2.0 * H);
        Unit::new_normalize(Vector3::new(-hx, 1.0, -hz))
    }

    pub fn pose_transform(&self) -> RigidTransform {
        self.pose
            .as_ref()
            .map(|p| p.to_transform().expect("validated pose"))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHead {
    pub surface: SurfacePointSet,
    pub landmarks: LandmarkSet3D,
    /// Set when the density is below 1 point/mm², too coarse for the nose.
    pub low_density: bool,
}

/// Samples the head on a jittered `(x, z)` grid.
pub fn generate_head(spec: &SyntheticHeadSpec) -> Result<SyntheticHead> {
    spec.validate()?;
    let [a, _, c] = spec.semi_axes;
    let cell = 1.0 / spec.density.sqrt();
    let (nx, nz) = ((2.0 * a / cell).ceil() as usize, (2.0 * c / cell).ceil() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for k in 0..nz {
        for i in 0..nx {
            let x = -a + (i as f64 + rng.random::<f64>()) * cell;
            let z = -c + (k as f64 + rng.random::<f64>()) * cell;
            let mut jitter = [0.0; 3];
            if spec.noise_mm > 0.0 {
                for j in &mut jitter {
                    *j = spec.noise_mm * rng.sample::<f64, _>(StandardNormal);
                }
            }
            if !spec.in_mask(x, z) {
                continue;
            }
            if let Some([lo, hi]) = spec.crop_z {
                if z < lo || z > hi {
                    continue;
                }
            }
            points.push(Point3::new(x + jitter[0], spec.height(x, z) + jitter[1], z + jitter[2]));
            normals.push(spec.normal(x, z));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("synthetic surface after cropping"));
    }
    let surface = SurfacePointSet::with_normals(points, normals)?;
    let landmarks = LandmarkSet3D::new(
        spec.landmarks
            .iter()
            .map(|l| (l.index, Point3::new(l.at[0], spec.height(l.at[0], l.at[1]), l.at[1]))),
    )?;
    let pose = spec.pose_transform();
    Ok(SyntheticHead {
        surface: apply_transform(&pose, &surface)?,
        landmarks: landmarks.transformed(&pose),
        low_density: spec.density < 1.0,
    })
}

/// Projection used by the angle sweep.
pub fn sweep_projection() -> ProjectionConfig {
    ProjectionConfig {
        width: 512,
        height: 512,
        pixel_pitch: Some(0.5),
        ..Default::default()
    }
}

/// Default ε grid for the angle sweep, from π/18 to 4π/9.
pub fn default_sweep_epsilons() -> Vec<f64> {
    [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0].iter().map(|k| k * PI / 18.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub epsilon_rad: f64,
    pub sigma_px: f64,
    pub trial: usize,
    /// NaN when the trial failed.
    pub e_poi_mm: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon_rad: f64,
    pub sigma_px: f64,
    /// Failed trials count as +∞.
    pub median_e_poi_mm: f64,
    /// Over successful trials only; NaN if none succeeded.
    pub mean_e_poi_mm: f64,
    pub failures: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<SweepTrial>,
}

impl SweepResult {
    pub fn row(&self, epsilon: f64, sigma_px: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| (r.epsilon_rad - epsilon).abs() < 1e-12 && r.sigma_px == sigma_px)
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from("epsilon_rad,sigma_px,trial,e_poi_mm,failed\n");
        for t in &self.trials {
            let _ = writeln!(s, "{},{},{},{},{}", t.epsilon_rad, t.sigma_px, t.trial, t.e_poi_mm, t.failed);
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("epsilon_rad,sigma_px,median_e_poi_mm,mean_e_poi_mm,failures,trials\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epsilon_rad, r.sigma_px, r.median_e_poi_mm, r.mean_e_poi_mm, r.failures, r.trials
            );
        }
        s
    }
}

/// Median with NaN treated as +∞.
pub fn median_with_failures(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|&x| if x.is_nan() { f64::INFINITY } else { x }).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(trials: &[SweepTrial]) -> SweepRow {
    let e: Vec<f64> = trials.iter().map(|t| t.e_poi_mm).collect();
    let ok: Vec<f64> = e.iter().copied().filter(|v| !v.is_nan()).collect();
    SweepRow {
        epsilon_rad: trials[0].epsilon_rad,
        sigma_px: trials[0].sigma_px,
        median_e_poi_mm: median_with_failures(&e),
        mean_e_poi_mm: if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        },
        failures: e.len() - ok.len(),
        trials: e.len(),
    }
}

/// Sweep settings beyond the head itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub sigmas_px: Vec<f64>,
    pub trials: usize,
    pub projection: ProjectionConfig,
    pub subset: Vec<u32>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: default_sweep_epsilons(),
            sigmas_px: vec![1.0],
            trials: 200,
            projection: sweep_projection(),
            subset: DEFAULT_SUBSET.to_vec(),
            seed: 0,
        }
    }
}

/// For each ε renders the head at `±ε/2`, then per trial detects the
/// landmarks with the visibility-aware oracle, lifts them and scores E_poi
/// against ground truth. A trial fails when any landmark is not detected or
/// cannot be lifted.
pub fn run_angle_sweep(spec: &SyntheticHeadSpec, cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.trials < 1 {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    let mut eps = cfg.epsilons.clone();
    if eps.iter().any(|&e| !(e > 0.0 && e < PI)) {
        return Err(Error::Config("sweep epsilons must lie in (0, pi)".into()));
    }
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let head = generate_head(spec)?;
    let truth = head.landmarks.subset(&cfg.subset);
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for &e in &eps {
        let angles = AnglePair::symmetric(e)?;
        let img1 = render_projection(&head.surface, angles.phi1(), &cfg.projection)?;
        let img2 = render_projection(&head.surface, angles.phi2(), &cfg.projection)?;
        for (si, &sigma) in cfg.sigmas_px.iter().enumerate() {
            let batch: Vec<SweepTrial> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(cfg.seed, ((si as u64) << 32) | t as u64);
                    let e_poi = sweep_trial(&img1, &img2, &truth, sigma, &mut rng).unwrap_or(f64::NAN);
                    SweepTrial {
                        epsilon_rad: e,
                        sigma_px: sigma,
                        trial: t,
                        e_poi_mm: e_poi,
                        failed: e_poi.is_nan(),
                    }
                })
                .collect();
            rows.push(aggregate(&batch));
            trials.extend(batch);
        }
    }
    Ok(SweepResult { rows, trials })
}

fn sweep_trial(
    img1: &ProjectionImage,
    img2: &ProjectionImage,
    truth: &LandmarkSet3D,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let a = oracle_detect_visible(img1, truth, sigma, rng);
    let b = oracle_detect_visible(img2, truth, sigma, rng);
    if !a.excluded.is_empty() || !b.excluded.is_empty() {
        return Err(Error::IndexMismatch {
            missing: a.excluded.iter().chain(&b.excluded).map(|e| e.0).collect(),
        });
    }
    let lifted = lift_landmark_set(&a.landmarks, &b.landmarks)?;
    point_error(&lifted, truth)
}

/// Noise sweep of the lifting step alone: the point is observed at `±ε/2`
/// with i.i.d. `N(0, σ²)` noise (mm) on both x-coordinates. Returns
/// `(ε, median |L − L̂|, mean |L − L̂|)` per ε.
pub fn lifting_noise_sweep(
    point: &Point3,
    epsilons: &[f64],
    sigma_mm: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let radius = point.x.hypot(point.y);
    epsilons
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let angles = AnglePair::symmetric(e)?;
            let x1 = forward_project(point, angles.phi1());
            let x2 = forward_project(point, angles.phi2());
            let mut rng = stream_rng(seed, k as u64);
            let mut errs = Vec::with_capacity(trials);
            for _ in 0..trials {
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                let q = lift_landmark(x1 + sigma_mm * n1, x2 + sigma_mm * n2, point.z, &angles)?;
                errs.push((q.x.hypot(q.y) - radius).abs());
            }
            let mean = errs.iter().sum::<f64>() / trials as f64;
            Ok((e, median_with_failures(&errs), mean))
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndToEndConfig {
    pub angles: AnglePair,
    pub projection: ProjectionConfig,
    pub noise_sigma_px: f64,
    /// Use the visibility-aware oracle instead of pure forward projection.
    pub visibility: bool,
    pub subset: Vec<u32>,
    pub subsurface_radius: f64,
    pub icp: IcpConfig,
    pub seed: u64,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        Self {
            angles: AnglePair::default(),
            projection: ProjectionConfig::default(),
            noise_sigma_px: 0.0,
            visibility: false,
            subset: DEFAULT_SUBSET.to_vec(),
            subsurface_radius: DEFAULT_SUBSURFACE_RADIUS,
            icp: IcpConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub registration: RegistrationReport,
    pub true_transform: TransformRecord,
    /// Recovered-vs-true motion of the landmark solve.
    pub landmark_rotation_error_rad: f64,
    pub landmark_translation_error_mm: f64,
    /// Recovered-vs-true motion after ICP.
    pub rotation_error_rad: f64,
    pub translation_error_mm: f64,
    /// E_poi of the lifted landmarks of each surface against ground truth.
    pub lift_error_a_mm: f64,
    pub lift_error_b_mm: f64,
    pub angle_warning: bool,
}

/// Detects one surface's landmarks in both views and lifts them.
pub fn detect_and_lift(
    surface: &SurfacePointSet,
    truth: &LandmarkSet3D,
    cfg: &EndToEndConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LandmarkSet3D> {
    let truth = truth.subset(&cfg.subset);
    let mut views: Vec<LandmarkSet2D> = Vec::with_capacity(2);
    for phi in [cfg.angles.phi1(), cfg.angles.phi2()] {
        let img = render_projection(surface, phi, &cfg.projection)?;
        let det = if cfg.visibility {
            oracle_detect_visible(&img, &truth, cfg.noise_sigma_px, rng)
        } else {
            oracle_project_landmarks(&truth, img.calibration(), cfg.noise_sigma_px, rng)
        };
        views.push(det.landmarks);
    }
    lift_landmark_set(&views[0], &views[1])
}

/// Full pipeline from surface A to surface B: render and detect both, lift,
/// solve from landmarks, select sub-surfaces and refine with ICP.
pub fn run_end_to_end(
    spec_a: &SyntheticHeadSpec,
    spec_b: &SyntheticHeadSpec,
    cfg: &EndToEndConfig,
) -> Result<EndToEndReport> {
    let a = generate_head(spec_a)?;
    let b = generate_head(spec_b)?;
    let mut rng_a = stream_rng(cfg.seed, 0);
    let mut rng_b = stream_rng(cfg.seed, 1);
    let la = detect_and_lift(&a.surface, &a.landmarks, cfg, &mut rng_a)?;
    let lb = detect_and_lift(&b.surface, &b.landmarks, cfg, &mut rng_b)?;
    let t0 = solve_landmark_transform(&la, &lb)?;
    let sub_a = select_subsurface(&a.surface, &la, cfg.subsurface_radius)?;
    let sub_b = select_subsurface(&b.surface, &lb, cfg.subsurface_radius)?;
    let report = icp_refine(&sub_a, &sub_b, &t0, &cfg.icp)?;
    let truth = spec_b.pose_transform().compose(&spec_a.pose_transform().inverse());
    let t = report.transform();
    Ok(EndToEndReport {
        true_transform: TransformRecord::from(&truth),
        landmark_rotation_error_rad: t0.rotation_distance(&truth),
        landmark_translation_error_mm: t0.translation_distance(&truth),
        rotation_error_rad: t.rotation_distance(&truth),
        translation_error_mm: t.translation_distance(&truth),
        lift_error_a_mm: point_error(&la, &a.landmarks.subset(&cfg.subset))?,
        lift_error_b_mm: point_error(&lb, &b.landmarks.subset(&cfg.subset))?,
        angle_warning: cfg.angles.warning(),
        registration: report,
    })
}
