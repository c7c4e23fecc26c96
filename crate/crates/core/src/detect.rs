//! 2D landmark detection on rendered projections.
//!
//! Two detectors share one output type: an oracle that forward-projects known
//! 3D landmarks (optionally with pixel noise and a visibility model), and a
//! client for an external 68-point detector spoken to over line-delimited
//! JSON on a child process's stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::rotate_about_z;
use crate::lift::LandmarkSet3D;
use crate::render::{Calibration, ProjectionImage};

/// Landmarks in the standard annotation are numbered `0..LANDMARK_COUNT`.
pub const LANDMARK_COUNT: u32 = 68;
/// Nose bridge, nose base and inner eye corners.
pub const DEFAULT_SUBSET: [u32; 10] = [27, 28, 29, 30, 31, 33, 35, 36, 39, 42];
pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;
/// A landmark counts as occluded when the rendered depth is this far (mm)
/// in front of it.
pub const OCCLUSION_TOLERANCE: f64 = 2.0;
/// Lower bound on the intensity used to scale noise in the visibility model.
pub const INTENSITY_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landmark2D {
    pub index: u32,
    pub col: f64,
    pub row: f64,
    /// Rotated-frame x in mm.
    pub x_world: f64,
    pub z_world: f64,
}

/// Landmarks of one view, strictly increasing by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LandmarkSet2DWire")]
pub struct LandmarkSet2D {
    landmarks: Vec<Landmark2D>,
    source_phi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkSet2DWire {
    landmarks: Vec<Landmark2D>,
    source_phi: f64,
}

impl TryFrom<LandmarkSet2DWire> for LandmarkSet2D {
    type Error = Error;

    fn try_from(w: LandmarkSet2DWire) -> Result<Self> {
        LandmarkSet2D::new(w.landmarks, w.source_phi)
    }
}

impl LandmarkSet2D {
    pub fn new(mut landmarks: Vec<Landmark2D>, source_phi: f64) -> Result<Self> {
        landmarks.sort_by_key(|l| l.index);
        for w in landmarks.windows(2) {
            if w[0].index == w[1].index {
                return Err(Error::InvalidInput(format!("duplicate landmark index {}", w[0].index)));
            }
        }
        if !source_phi.is_finite() {
            return Err(Error::InvalidAngles(format!("source_phi {source_phi}")));
        }
        Ok(Self {
            landmarks,
            source_phi,
        })
    }

    pub fn landmarks(&self) -> &[Landmark2D] {
        &self.landmarks
    }

    pub fn source_phi(&self) -> f64 {
        self.source_phi
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn indices(&self) -> Vec<u32> {
        self.landmarks.iter().map(|l| l.index).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Oracle,
    External,
}

/// Which detector to use and which landmarks to keep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub external_command: Option<String>,
    pub subset: Vec<u32>,
    /// Oracle pixel noise standard deviation.
    pub noise_sigma_px: f64,
    /// External detector timeout per image, in seconds.
    pub timeout_secs: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Oracle,
            external_command: None,
            subset: DEFAULT_SUBSET.to_vec(),
            noise_sigma_px: 0.0,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        let mut s = self.subset.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.subset.len() {
            return Err(Error::Config("detector subset has duplicate indices".into()));
        }
        if s.len() < 3 {
            return Err(Error::Config(format!(
                "detector subset needs at least 3 landmarks, got {}",
                s.len()
            )));
        }
        if let Some(&bad) = s.iter().find(|&&i| i >= LANDMARK_COUNT) {
            return Err(Error::Config(format!("subset index {bad} outside 0..{LANDMARK_COUNT}")));
        }
        if !(self.noise_sigma_px >= 0.0 && self.noise_sigma_px.is_finite()) {
            return Err(Error::Config(format!("noise_sigma_px {} must be >= 0", self.noise_sigma_px)));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!("timeout_secs {} must be > 0", self.timeout_secs)));
        }
        if self.kind == DetectorKind::External
            && self.external_command.as_deref().is_none_or(|c| c.trim().is_empty())
        {
            return Err(Error::Config("external detector needs external_command".into()));
        }
        Ok(())
    }
}

/// Why the oracle dropped a landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    OutsideRaster,
    EmptyPixel,
    Occluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDetection {
    pub landmarks: LandmarkSet2D,
    pub excluded: Vec<(u32, Exclusion)>,
}

fn landmark_at(cal: &Calibration, index: u32, col: f64, row: f64) -> Landmark2D {
    let (x_world, z_world) = cal.pixel_to_world_unchecked(col, row);
    Landmark2D {
        index,
        col,
        row,
        x_world,
        z_world,
    }
}

/// Ground-truth forward model: rotates each landmark by the calibration's
/// `φ`, maps it to pixels, adds i.i.d. `N(0, σ²)` pixel noise to col and row
/// and maps back to world. Landmarks landing outside the raster are excluded.
pub fn oracle_project_landmarks<R: Rng + ?Sized>(
    landmarks: &LandmarkSet3D,
    cal: &Calibration,
    noise_sigma: f64,
    rng: &mut R,
) -> OracleDetection {
    let mut kept = Vec::with_capacity(landmarks.len());
    let mut excluded = Vec::new();
    for l in landmarks.landmarks() {
        let q = rotate_about_z(&l.position(), cal.phi);
        let (mut col, mut row) = cal.world_to_pixel(q.x, q.z);
        if noise_sigma > 0.0 {
            col += noise_sigma * rng.sample::<f64, _>(StandardNormal);
            row += noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if cal.contains(col, row) {
            kept.push(landmark_at(cal, l.index, col, row));
        } else {
            excluded.push((l.index, Exclusion::OutsideRaster));
        }
    }
    OracleDetection {
        landmarks: LandmarkSet2D::new(kept, cal.phi).expect("indices already unique"),
        excluded,
    }
}

/// Oracle that also consults the rendered image. A landmark is dropped when
/// its pixel is empty or the rendered surface there lies more than
/// [`OCCLUSION_TOLERANCE`] in front of it. Noise is scaled by
/// `1 / max(I, INTENSITY_FLOOR)` with `I` the shaded intensity at the
/// landmark's pixel, so grazing views detect worse.
pub fn oracle_detect_visible<R: Rng + ?Sized>(
    img: &ProjectionImage,
    landmarks: &LandmarkSet3D,
    noise_sigma: f64,
    rng: &mut R,
) -> OracleDetection {
    let cal = img.calibration();
    let mut kept = Vec::with_capacity(landmarks.len());
    let mut excluded = Vec::new();
    for l in landmarks.landmarks() {
        let q = rotate_about_z(&l.position(), cal.phi);
        let (col, row) = cal.world_to_pixel(q.x, q.z);
        let (n1, n2): (f64, f64) = if noise_sigma > 0.0 {
            (rng.sample(StandardNormal), rng.sample(StandardNormal))
        } else {
            (0.0, 0.0)
        };
        let Some((pc, pr)) = cal.nearest_pixel(col, row) else {
            excluded.push((l.index, Exclusion::OutsideRaster));
            continue;
        };
        let (intensity, depth, selected) = img.at(pc, pr);
        if selected.is_none() {
            excluded.push((l.index, Exclusion::EmptyPixel));
            continue;
        }
        if depth > q.y + OCCLUSION_TOLERANCE {
            excluded.push((l.index, Exclusion::Occluded));
            continue;
        }
        let sigma = noise_sigma / intensity.max(INTENSITY_FLOOR);
        let (col, row) = (col + sigma * n1, row + sigma * n2);
        if cal.contains(col, row) {
            kept.push(landmark_at(cal, l.index, col, row));
        } else {
            excluded.push((l.index, Exclusion::OutsideRaster));
        }
    }
    OracleDetection {
        landmarks: LandmarkSet2D::new(kept, cal.phi).expect("indices already unique"),
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLandmark {
    pub index: u32,
    pub col: f64,
    pub row: f64,
}

#[derive(Debug, Serialize)]
struct BridgeRequest<'a> {
    image_path: &'a str,
    width: usize,
    height: usize,
}

#[derive(Debug, Deserialize)]
struct BridgeResponse {
    detected: bool,
    #[serde(default)]
    landmarks: Vec<RawLandmark>,
    #[serde(default)]
    error: Option<String>,
}

/// Persistent connection to an external detector process.
///
/// The command runs under `sh -c`. Requests are serialised; one response
/// line is expected per request line.
pub struct BridgeClient {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    timeout: Duration,
}

impl BridgeClient {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start '{command}': {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr_pipe = child.stderr.take().expect("stderr piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines().map_while(|l| l.ok()) {
                let mut s = sink.lock().unwrap_or_else(|p| p.into_inner());
                if s.len() < 16 * 1024 {
                    s.push_str(&line);
                    s.push('\n');
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            child,
            stdin,
            lines,
            stderr,
            timeout,
        })
    }

    fn diagnostics(&mut self) -> String {
        thread::sleep(Duration::from_millis(20));
        let status = match self.child.try_wait() {
            Ok(Some(s)) => format!("exited with {s}"),
            Ok(None) => "still running".to_string(),
            Err(e) => format!("status unknown ({e})"),
        };
        let err = self.stderr.lock().unwrap_or_else(|p| p.into_inner()).trim().to_string();
        if err.is_empty() {
            format!("'{}' {status}", self.command)
        } else {
            format!("'{}' {status}; stderr: {err}", self.command)
        }
    }

    /// Sends one image and returns the detector's raw landmarks.
    pub fn request(&mut self, image_path: &Path, width: usize, height: usize) -> Result<Vec<RawLandmark>> {
        let path = image_path
            .to_str()
            .ok_or_else(|| Error::Bridge(format!("image path {} is not UTF-8", image_path.display())))?;
        let mut line = serde_json::to_string(&BridgeRequest {
            image_path: path,
            width,
            height,
        })?;
        line.push('\n');
        let sent = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if let Err(e) = sent {
            let d = self.diagnostics();
            return Err(Error::Bridge(format!("write failed ({e}): {d}")));
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                let d = self.diagnostics();
                return Err(Error::Bridge(format!("read failed ({e}): {d}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                let d = self.diagnostics();
                return Err(Error::Bridge(format!(
                    "no response within {:.1} s: {d}",
                    self.timeout.as_secs_f64()
                )));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let d = self.diagnostics();
                return Err(Error::Bridge(format!("detector closed its output: {d}")));
            }
        };
        let resp: BridgeResponse = serde_json::from_str(reply.trim())
            .map_err(|e| Error::Bridge(format!("malformed response ({e}): {}", reply.trim())))?;
        if !resp.detected {
            return match resp.error {
                Some(e) => Err(Error::Bridge(format!("detector error: {e}"))),
                None => Err(Error::NoFaceDetected),
            };
        }
        for l in &resp.landmarks {
            if l.index >= LANDMARK_COUNT {
                return Err(Error::Protocol(format!(
                    "landmark index {} outside 0..{LANDMARK_COUNT}",
                    l.index
                )));
            }
            if !(l.col.is_finite() && l.row.is_finite()) {
                return Err(Error::Protocol(format!("landmark {} has non-finite pixel", l.index)));
            }
        }
        Ok(resp.landmarks)
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// Keeps `subset` out of a raw detection and maps it to world coordinates.
/// Every subset index must be present and inside the raster.
pub fn select_subset(raw: &[RawLandmark], cal: &Calibration, subset: &[u32]) -> Result<LandmarkSet2D> {
    let mut out = Vec::with_capacity(subset.len());
    let mut missing = Vec::new();
    for &index in subset {
        match raw.iter().find(|l| l.index == index) {
            Some(l) => {
                cal.pixel_to_world(l.col, l.row)?;
                out.push(landmark_at(cal, index, l.col, l.row));
            }
            None => missing.push(index),
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(Error::IndexMismatch { missing });
    }
    LandmarkSet2D::new(out, cal.phi)
}

/// External detection of an exported raster.
pub fn detect_external(
    client: &mut BridgeClient,
    raster_path: &Path,
    cal: &Calibration,
    subset: &[u32],
) -> Result<LandmarkSet2D> {
    let raw = client.request(raster_path, cal.width, cal.height)?;
    select_subset(&raw, cal, subset)
}
