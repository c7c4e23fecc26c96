use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facereg_core::detect::{detect_external, BridgeClient};
use facereg_core::ingest::load_point_set;
use facereg_core::lift::lift_landmark_set;
use facereg_core::pipeline::{
    self, detect_oracle, landmarks2d_file, landmarks3d_file, load_input_surface, oracle_rng, projection_file,
    read_json, refine, write_json, Side, REPORT_FILE, TRANSFORM_FILE,
};
use facereg_core::render::load_calibration;
use facereg_core::synth::{run_angle_sweep, SweepConfig, SyntheticHeadSpec};
use facereg_core::{
    apply_transform, surface_error, DetectorKind, Error, ErrorKind, LandmarkSet2D, LandmarkSet3D, PipelineConfig,
    Result, TransformRecord,
};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "facereg", version, about = "Landmark-initialised rigid registration of 3D facial surfaces")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    detector: Option<DetectorArg>,
    #[arg(long, global = true)]
    external_cmd: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    phi1_deg: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    phi2_deg: Option<f64>,
    #[arg(long, global = true)]
    subsurface_radius_mm: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    threshold_hu: Option<f64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Oracle,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    A,
    B,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::A => Side::A,
            SideArg::B => Side::B,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: project, detect, lift, solve, refine, report.
    Register,
    /// Render one view of one input surface to PNG plus calibration sidecar.
    Project {
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        view: u8,
        /// Overrides the config's input surface.
        #[arg(long)]
        surface: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect landmarks in one rendered view.
    Detect {
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        view: u8,
        /// Rendered PNG; its calibration sidecar must sit next to it.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Ground-truth 3D landmarks for the oracle.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lift the two views of one surface to 3D landmarks.
    Lift {
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        view1: Option<PathBuf>,
        #[arg(long)]
        view2: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Landmark solve plus ICP refinement; writes transform.json and registration.json.
    Icp {
        #[arg(long)]
        surface_a: Option<PathBuf>,
        #[arg(long)]
        surface_b: Option<PathBuf>,
        #[arg(long)]
        landmarks_a: Option<PathBuf>,
        #[arg(long)]
        landmarks_b: Option<PathBuf>,
    },
    /// One-sided sup/mean distance from X (optionally transformed) to Y.
    Metrics {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        transform: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic head: surface.ply and landmarks.json.
    Synth {
        /// Head spec (TOML); defaults otherwise.
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Angle sweep on a synthetic head; writes trial and aggregate CSVs.
    Sweep {
        #[arg(long)]
        head: Option<PathBuf>,
        /// Sweep settings (TOML); defaults otherwise.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Detection => 4,
        ErrorKind::Geometry => 5,
    }
}

fn kind_tag(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Io => "io",
        ErrorKind::Detection => "detection",
        ErrorKind::Geometry => "geometry",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("facereg-error kind={} code={}: {msg}", kind_tag(kind), exit_code(kind));
            ExitCode::from(exit_code(kind))
        }
    }
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn pipeline_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = c.detector {
        cfg.detector.kind = match d {
            DetectorArg::Oracle => DetectorKind::Oracle,
            DetectorArg::External => DetectorKind::External,
        };
    }
    if let Some(cmd) = &c.external_cmd {
        cfg.detector.external_command = Some(cmd.clone());
    }
    if let Some(v) = c.phi1_deg {
        cfg.angles.phi1_deg = v;
    }
    if let Some(v) = c.phi2_deg {
        cfg.angles.phi2_deg = v;
    }
    if let Some(v) = c.subsurface_radius_mm {
        cfg.subsurface_radius_mm = v;
    }
    if let Some(v) = c.threshold_hu {
        cfg.inputs.threshold_hu = v;
    }
    if let Some(d) = &c.out_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn input_for(cfg: &PipelineConfig, side: Side) -> &pipeline::SurfaceInput {
    match side {
        Side::A => &cfg.inputs.a,
        Side::B => &cfg.inputs.b,
    }
}

fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::Config(format!("missing {what}")))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = pipeline_config(&cli.common)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Register => {
            let outcome = pipeline::run_register(&cfg)?;
            if outcome.metrics.angle_warning {
                eprintln!(
                    "facereg-warning: angle separation {:.4} rad is outside (pi/9, pi/3); lifting may be unreliable",
                    outcome.metrics.epsilon_rad
                );
            }
            let m = &outcome.metrics;
            println!(
                "E_mean {:.6} mm  E_sup {:.6} mm  (landmark only: E_mean {:.6} mm)  iterations {}  -> {}",
                m.landmark_icp.e_mean,
                m.landmark_icp.e_sup,
                m.landmark_only.e_mean,
                m.icp_iterations,
                outcome.output_dir.display()
            );
        }
        Command::Project { side, view, surface, out: target } => {
            let side = Side::from(side);
            let view = view as usize;
            cfg.projection.validate()?;
            let angles = cfg.angles.to_pair()?;
            let s = match surface {
                Some(p) => load_point_set(&p)?,
                None => load_input_surface(input_for(&cfg, side), cfg.inputs.threshold_hu)?,
            };
            let phi = if view == 1 { angles.phi1() } else { angles.phi2() };
            let target = target.unwrap_or_else(|| out.join(projection_file(side, view)));
            ensure_parent(&target)?;
            let img = pipeline::project_to_file(&s, phi, &cfg.projection, &target)?;
            println!("{} ({}x{}, phi {:.6} rad)", target.display(), img.width(), img.height(), phi);
        }
        Command::Detect {
            side,
            view,
            image,
            landmarks,
            out: target,
        } => {
            let side = Side::from(side);
            let view = view as usize;
            cfg.detector.validate()?;
            let image = image.unwrap_or_else(|| out.join(projection_file(side, view)));
            let cal = load_calibration(&image.with_extension("json"))?;
            let set = match cfg.detector.kind {
                DetectorKind::Oracle => {
                    let truth_path = require(
                        landmarks.or_else(|| input_for(&cfg, side).landmarks.clone()),
                        "ground-truth landmarks for the oracle detector",
                    )?;
                    let truth: LandmarkSet3D = read_json(&truth_path)?;
                    detect_oracle(&truth, &cal, &cfg.detector, &mut oracle_rng(cfg.seed, side, view))?
                }
                DetectorKind::External => {
                    let mut client = BridgeClient::spawn(
                        cfg.detector.external_command.as_deref().expect("validated"),
                        Duration::from_secs_f64(cfg.detector.timeout_secs),
                    )?;
                    let abs = fs::canonicalize(&image).map_err(|e| Error::io(&image, e))?;
                    detect_external(&mut client, &abs, &cal, &cfg.detector.subset)?
                }
            };
            let target = target.unwrap_or_else(|| out.join(landmarks2d_file(side, view)));
            ensure_parent(&target)?;
            write_json(&target, &set)?;
            println!("{} ({} landmarks)", target.display(), set.len());
        }
        Command::Lift {
            side,
            view1,
            view2,
            out: target,
        } => {
            let side = Side::from(side);
            let v1: LandmarkSet2D = read_json(&view1.unwrap_or_else(|| out.join(landmarks2d_file(side, 1))))?;
            let v2: LandmarkSet2D = read_json(&view2.unwrap_or_else(|| out.join(landmarks2d_file(side, 2))))?;
            let l3 = lift_landmark_set(&v1, &v2)?;
            let target = target.unwrap_or_else(|| out.join(landmarks3d_file(side)));
            ensure_parent(&target)?;
            write_json(&target, &l3)?;
            println!("{} ({} landmarks)", target.display(), l3.len());
        }
        Command::Icp {
            surface_a,
            surface_b,
            landmarks_a,
            landmarks_b,
        } => {
            cfg.icp.validate()?;
            let load = |p: Option<PathBuf>, side: Side| -> Result<_> {
                match p {
                    Some(p) => load_point_set(&p),
                    None => load_input_surface(input_for(&cfg, side), cfg.inputs.threshold_hu),
                }
            };
            let sa = load(surface_a, Side::A)?;
            let sb = load(surface_b, Side::B)?;
            let la: LandmarkSet3D = read_json(&landmarks_a.unwrap_or_else(|| out.join(landmarks3d_file(Side::A))))?;
            let lb: LandmarkSet3D = read_json(&landmarks_b.unwrap_or_else(|| out.join(landmarks3d_file(Side::B))))?;
            let refined = refine(&sa, &sb, &la, &lb, cfg.subsurface_radius_mm, &cfg.icp)?;
            ensure_dir(&out)?;
            write_json(&out.join(TRANSFORM_FILE), &TransformRecord::from(&refined.report.transform()))?;
            write_json(&out.join(REPORT_FILE), &refined.report)?;
            println!(
                "E_mean {:.6} mm after {} iterations -> {}",
                refined.report.final_metrics.e_mean,
                refined.report.iterations,
                out.join(TRANSFORM_FILE).display()
            );
        }
        Command::Metrics {
            x,
            y,
            transform,
            out: target,
        } => {
            let mut xs = load_point_set(&x)?;
            if let Some(t) = transform {
                let rec: TransformRecord = read_json(&t)?;
                xs = apply_transform(&rec.to_transform()?, &xs)?;
            }
            let ys = load_point_set(&y)?;
            let report = surface_error(&xs, &ys)?.summary();
            if let Some(t) = target {
                ensure_parent(&t)?;
                write_json(&t, &report)?;
            }
            print_json(&report)?;
        }
        Command::Synth { head } => {
            let mut spec: SyntheticHeadSpec = match head {
                Some(p) => load_toml(&p)?,
                None => SyntheticHeadSpec::default(),
            };
            if let Some(s) = cli.common.seed {
                spec.seed = s;
            }
            let h = pipeline::write_synthetic(&spec, &out)?;
            if h.low_density {
                eprintln!("facereg-warning: sampling density below 1 point/mm^2 near landmarks");
            }
            println!("{} points, {} landmarks -> {}", h.surface.len(), h.landmarks.len(), out.display());
        }
        Command::Sweep { head, sweep, trials } => {
            let spec: SyntheticHeadSpec = match head {
                Some(p) => load_toml(&p)?,
                None => SyntheticHeadSpec::default(),
            };
            let mut sc: SweepConfig = match sweep {
                Some(p) => load_toml(&p)?,
                None => SweepConfig::default(),
            };
            if let Some(s) = cli.common.seed {
                sc.seed = s;
            }
            if let Some(t) = trials {
                sc.trials = t;
            }
            let result = run_angle_sweep(&spec, &sc)?;
            pipeline::write_sweep(&result, &out)?;
            print!("{}", result.aggregate_csv());
        }
    }
    Ok(())
}
