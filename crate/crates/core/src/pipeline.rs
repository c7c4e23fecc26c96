//! Config-driven orchestration: the `register` runner and the file-level
//! stages it is assembled from.
//!
//! Every stage reads and writes plain files, so running the stages one by one
//! reproduces the monolithic run's artifacts byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_external, oracle_project_landmarks, BridgeClient, DetectorKind, DetectorSpec, LandmarkSet2D};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, estimate_normals, NormalOrientation, RigidTransform, SurfacePointSet, Vector3};
use crate::ingest::{
    extract_isosurface, load_point_set, load_volume, mesh_to_point_set, save_surface, Orientation, Surface,
    DEFAULT_THRESHOLD_HU,
};
use crate::lift::{lift_landmark_set, AnglePair, LandmarkSet3D};
use crate::metrics::{export_distance_colormap, point_error, signed_distance, SurfaceErrorReport};
use crate::registration::{
    icp_refine, select_subsurface, solve_landmark_transform, IcpConfig, RegistrationReport, TransformRecord,
    DEFAULT_SUBSURFACE_RADIUS,
};
use crate::render::{export_projection, render_projection, Calibration, ProjectionConfig, ProjectionImage, RasterFormat, NORMAL_NEIGHBOURS};
use crate::synth::{generate_head, stream_rng, SweepResult, SyntheticHead, SyntheticHeadSpec};

pub const DEFAULT_COLORMAP_RANGE: f64 = 2.0;
pub const DEFAULT_OUTPUT_DIR: &str = "facereg-out";

pub const TRANSFORM_FILE: &str = "transform.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const REGISTERED_FILE: &str = "registered.ply";
pub const COLORMAP_FILE: &str = "distance_colormap.ply";
pub const REPORT_FILE: &str = "registration.json";
pub const SYNTH_SURFACE_FILE: &str = "surface.ply";
pub const SYNTH_LANDMARKS_FILE: &str = "landmarks.json";
pub const SWEEP_TRIALS_FILE: &str = "sweep_trials.csv";
pub const SWEEP_AGGREGATE_FILE: &str = "sweep_aggregate.csv";

/// Which of the two surfaces: A is moved onto B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn tag(self) -> &'static str {
        match self {
            Side::A => "a",
            Side::B => "b",
        }
    }

    fn ordinal(self) -> u64 {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

pub fn projection_file(side: Side, view: usize) -> String {
    format!("projection_{}_{view}.png", side.tag())
}

pub fn landmarks2d_file(side: Side, view: usize) -> String {
    format!("landmarks2d_{}_{view}.json", side.tag())
}

pub fn landmarks3d_file(side: Side) -> String {
    format!("landmarks3d_{}.json", side.tag())
}

/// One input surface, given either directly or as a voxel volume.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceInput {
    /// PLY or OBJ file.
    pub surface: Option<PathBuf>,
    /// Voxel volume; the surface is its isosurface at `inputs.threshold_hu`.
    pub volume: Option<PathBuf>,
    /// Ground-truth 3D landmarks (JSON), required by the oracle detector.
    pub landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub a: SurfaceInput,
    pub b: SurfaceInput,
    pub threshold_hu: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            a: SurfaceInput::default(),
            b: SurfaceInput::default(),
            threshold_hu: DEFAULT_THRESHOLD_HU,
        }
    }
}

/// Projection angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AngleConfig {
    pub phi1_deg: f64,
    pub phi2_deg: f64,
}

impl Default for AngleConfig {
    fn default() -> Self {
        Self {
            phi1_deg: 20.0,
            phi2_deg: -20.0,
        }
    }
}

impl AngleConfig {
    pub fn to_pair(&self) -> Result<AnglePair> {
        AnglePair::new(self.phi1_deg.to_radians(), self.phi2_deg.to_radians())
    }
}

/// Everything `register` needs. Relative paths in a config file are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: InputConfig,
    pub detector: DetectorSpec,
    pub angles: AngleConfig,
    pub projection: ProjectionConfig,
    pub subsurface_radius_mm: f64,
    pub icp: IcpConfig,
    /// Signed distances at `±colormap_range_mm` saturate the colormap.
    pub colormap_range_mm: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: InputConfig::default(),
            detector: DetectorSpec::default(),
            angles: AngleConfig::default(),
            projection: ProjectionConfig::default(),
            subsurface_radius_mm: DEFAULT_SUBSURFACE_RADIUS,
            icp: IcpConfig::default(),
            colormap_range_mm: DEFAULT_COLORMAP_RANGE,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            seed: 0,
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for input in [&mut cfg.inputs.a, &mut cfg.inputs.b] {
            rebase(base, &mut input.surface);
            rebase(base, &mut input.volume);
            rebase(base, &mut input.landmarks);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, input) in [("a", &self.inputs.a), ("b", &self.inputs.b)] {
            if input.surface.is_some() == input.volume.is_some() {
                return Err(Error::Config(format!("inputs.{name} needs exactly one of surface or volume")));
            }
            if self.detector.kind == DetectorKind::Oracle && input.landmarks.is_none() {
                return Err(Error::Config(format!("oracle detector needs inputs.{name}.landmarks")));
            }
        }
        if !self.inputs.threshold_hu.is_finite() {
            return Err(Error::Config("inputs.threshold_hu must be finite".into()));
        }
        self.detector.validate()?;
        self.angles.to_pair()?;
        self.projection.validate()?;
        self.icp.validate()?;
        if !(self.subsurface_radius_mm > 0.0 && self.subsurface_radius_mm.is_finite()) {
            return Err(Error::Config(format!(
                "subsurface_radius_mm {} must be > 0",
                self.subsurface_radius_mm
            )));
        }
        if !(self.colormap_range_mm > 0.0 && self.colormap_range_mm.is_finite()) {
            return Err(Error::Config(format!("colormap_range_mm {} must be > 0", self.colormap_range_mm)));
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_input_surface(input: &SurfaceInput, threshold_hu: f64) -> Result<SurfacePointSet> {
    match (&input.surface, &input.volume) {
        (Some(path), None) => load_point_set(path),
        (None, Some(path)) => {
            let volume = load_volume(path)?;
            let mesh = extract_isosurface(&volume, threshold_hu, Orientation::TowardBelow)?;
            mesh_to_point_set(&mesh, Vector3::y())
        }
        _ => Err(Error::Config("surface input needs exactly one of surface or volume".into())),
    }
}

/// Renders `surface` at `phi` and writes the PNG plus its calibration sidecar.
pub fn project_to_file(
    surface: &SurfacePointSet,
    phi: f64,
    cfg: &ProjectionConfig,
    raster: &Path,
) -> Result<ProjectionImage> {
    let img = render_projection(surface, phi, cfg)?;
    export_projection(&img, raster, RasterFormat::Png)?;
    Ok(img)
}

/// Oracle noise stream for one (surface, view) pair.
pub fn oracle_rng(seed: u64, side: Side, view: usize) -> ChaCha8Rng {
    stream_rng(seed, 2 * side.ordinal() + view as u64)
}

/// Oracle detection of the configured subset. Every subset landmark must be
/// present in `truth` and land inside the raster.
pub fn detect_oracle(
    truth: &LandmarkSet3D,
    cal: &Calibration,
    spec: &DetectorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<LandmarkSet2D> {
    let picked = truth.subset(&spec.subset);
    if picked.len() != spec.subset.len() {
        let mut missing: Vec<u32> = spec.subset.iter().copied().filter(|&i| truth.get(i).is_none()).collect();
        missing.sort_unstable();
        return Err(Error::IndexMismatch { missing });
    }
    let det = oracle_project_landmarks(&picked, cal, spec.noise_sigma_px, rng);
    if !det.excluded.is_empty() {
        let mut missing: Vec<u32> = det.excluded.iter().map(|(i, _)| *i).collect();
        missing.sort_unstable();
        return Err(Error::LandmarksNotDetected { missing });
    }
    Ok(det.landmarks)
}

/// Landmark solve followed by ICP on the landmark-anchored sub-surfaces.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub landmark_transform: RigidTransform,
    pub report: RegistrationReport,
    pub sub_a: SurfacePointSet,
    pub sub_b: SurfacePointSet,
}

pub fn refine(
    surface_a: &SurfacePointSet,
    surface_b: &SurfacePointSet,
    la: &LandmarkSet3D,
    lb: &LandmarkSet3D,
    radius: f64,
    icp: &IcpConfig,
) -> Result<Refinement> {
    let t0 = solve_landmark_transform(la, lb)?;
    let sub_a = select_subsurface(surface_a, la, radius)?;
    let sub_b = select_subsurface(surface_b, lb, radius)?;
    let report = icp_refine(&sub_a, &sub_b, &t0, icp)?;
    Ok(Refinement {
        landmark_transform: t0,
        report,
        sub_a,
        sub_b,
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationMetrics {
    pub phi1_rad: f64,
    pub phi2_rad: f64,
    pub epsilon_rad: f64,
    pub angle_warning: bool,
    pub landmarks: Vec<u32>,
    pub subsurface_points: [usize; 2],
    /// Sub-surface error after the landmark solve alone.
    pub landmark_only: SurfaceErrorReport,
    /// Sub-surface error after ICP.
    pub landmark_icp: SurfaceErrorReport,
    /// E_poi between transformed A landmarks and B landmarks.
    pub e_poi_landmark_only_mm: f64,
    pub e_poi_landmark_icp_mm: f64,
    pub icp_iterations: usize,
    pub icp_residuals: Vec<f64>,
}

pub fn registration_metrics(
    angles: &AnglePair,
    la: &LandmarkSet3D,
    lb: &LandmarkSet3D,
    refined: &Refinement,
) -> Result<RegistrationMetrics> {
    let r = &refined.report;
    Ok(RegistrationMetrics {
        phi1_rad: angles.phi1(),
        phi2_rad: angles.phi2(),
        epsilon_rad: angles.epsilon(),
        angle_warning: angles.warning(),
        landmarks: la.indices(),
        subsurface_points: [refined.sub_a.len(), refined.sub_b.len()],
        landmark_only: r.initial_metrics.summary(),
        landmark_icp: r.final_metrics.summary(),
        e_poi_landmark_only_mm: point_error(&la.transformed(&refined.landmark_transform), lb)?,
        e_poi_landmark_icp_mm: point_error(&la.transformed(&r.transform()), lb)?,
        icp_iterations: r.iterations,
        icp_residuals: r.residuals.clone(),
    })
}

/// Writes the signed distance of each target sub-surface point to the
/// registered source sub-surface as a colored PLY.
pub fn write_colormap(refined: &Refinement, range: f64, path: &Path) -> Result<()> {
    let moved = apply_transform(&refined.report.transform(), &refined.sub_a)?;
    let estimated;
    let y = if refined.sub_b.has_normals() {
        &refined.sub_b
    } else {
        estimated = estimate_normals(&refined.sub_b, NORMAL_NEIGHBOURS, NormalOrientation::default())?;
        &estimated
    };
    let d = signed_distance(y, &moved)?;
    export_distance_colormap(y, &d, range, path)
}

#[derive(Debug, Clone)]
pub struct RegisterOutcome {
    pub transform: RigidTransform,
    pub metrics: RegistrationMetrics,
    pub output_dir: PathBuf,
}

/// Runs the full pipeline and writes every artifact into `cfg.output_dir`.
pub fn run_register(cfg: &PipelineConfig) -> Result<RegisterOutcome> {
    cfg.validate()?;
    let angles = cfg.angles.to_pair()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let surfaces = [
        load_input_surface(&cfg.inputs.a, cfg.inputs.threshold_hu)?,
        load_input_surface(&cfg.inputs.b, cfg.inputs.threshold_hu)?,
    ];
    let truths = match cfg.detector.kind {
        DetectorKind::Oracle => {
            let load = |input: &SurfaceInput| -> Result<LandmarkSet3D> {
                read_json(input.landmarks.as_deref().expect("validated"))
            };
            Some([load(&cfg.inputs.a)?, load(&cfg.inputs.b)?])
        }
        DetectorKind::External => None,
    };
    let mut client = match cfg.detector.kind {
        DetectorKind::External => Some(BridgeClient::spawn(
            cfg.detector.external_command.as_deref().expect("validated"),
            Duration::from_secs_f64(cfg.detector.timeout_secs),
        )?),
        DetectorKind::Oracle => None,
    };

    let mut lifted = Vec::with_capacity(2);
    for (k, side) in [Side::A, Side::B].into_iter().enumerate() {
        let mut views = Vec::with_capacity(2);
        for (view, phi) in [(1, angles.phi1()), (2, angles.phi2())] {
            let raster = out.join(projection_file(side, view));
            let img = project_to_file(&surfaces[k], phi, &cfg.projection, &raster)?;
            let set = match (&mut client, &truths) {
                (Some(c), _) => {
                    let abs = fs::canonicalize(&raster).map_err(|e| Error::io(&raster, e))?;
                    detect_external(c, &abs, img.calibration(), &cfg.detector.subset)?
                }
                (None, Some(t)) => detect_oracle(&t[k], img.calibration(), &cfg.detector, &mut oracle_rng(cfg.seed, side, view))?,
                (None, None) => unreachable!("detector resolved above"),
            };
            write_json(&out.join(landmarks2d_file(side, view)), &set)?;
            views.push(set);
        }
        let l3 = lift_landmark_set(&views[0], &views[1])?;
        write_json(&out.join(landmarks3d_file(side)), &l3)?;
        lifted.push(l3);
    }
    drop(client);

    let refined = refine(
        &surfaces[0],
        &surfaces[1],
        &lifted[0],
        &lifted[1],
        cfg.subsurface_radius_mm,
        &cfg.icp,
    )?;
    let t = refined.report.transform();
    write_json(&out.join(TRANSFORM_FILE), &TransformRecord::from(&t))?;
    write_json(&out.join(REPORT_FILE), &refined.report)?;
    let registered = apply_transform(&t, &surfaces[0])?;
    save_surface(&out.join(REGISTERED_FILE), &Surface::Points(registered), None)?;
    write_colormap(&refined, cfg.colormap_range_mm, &out.join(COLORMAP_FILE))?;
    let metrics = registration_metrics(&angles, &lifted[0], &lifted[1], &refined)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    Ok(RegisterOutcome {
        transform: t,
        metrics,
        output_dir: out,
    })
}

/// Generates a synthetic head and writes `surface.ply` and `landmarks.json`.
pub fn write_synthetic(spec: &SyntheticHeadSpec, dir: &Path) -> Result<SyntheticHead> {
    let head = generate_head(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_surface(&dir.join(SYNTH_SURFACE_FILE), &Surface::Points(head.surface.clone()), None)?;
    write_json(&dir.join(SYNTH_LANDMARKS_FILE), &head.landmarks)?;
    Ok(head)
}

pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trials = dir.join(SWEEP_TRIALS_FILE);
    fs::write(&trials, result.trials_csv()).map_err(|e| Error::io(&trials, e))?;
    let agg = dir.join(SWEEP_AGGREGATE_FILE);
    fs::write(&agg, result.aggregate_csv()).map_err(|e| Error::io(&agg, e))
}
