//! Orthographic shaded projections of a surface rotated about the z-axis.
//!
//! The surface is rotated by `phi`, then every pixel `(col, row)` looks along
//! −y from the plane `y = d`. Among points whose footprint covers the pixel,
//! the one with the largest rotated y (closest to the plane) wins, and the
//! pixel is shaded `max(n·(q − x)/‖q − x‖, 0)` for a point light at `q`.
//!
//! Pixel/world mapping: `x_rot = (col − s0)·pitch`, `z = (z0 − row)·pitch`,
//! with `(0, 0)` at the centre of the top-left pixel.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    estimate_normals, rotate_about_z, rotate_vector_about_z, NormalOrientation, Point3,
    SurfacePointSet, Vector3,
};

pub const DEFAULT_IMAGE_SIZE: usize = 1024;
pub const DEFAULT_SPLAT_RADIUS: f64 = 1.5;
/// Fraction of the raster the auto-fitted bounding box fills.
pub const AUTO_FILL: f64 = 0.9;
/// Clearance between the surface and an automatically placed plane, in mm.
pub const AUTO_PLANE_MARGIN: f64 = 10.0;
pub const NORMAL_NEIGHBOURS: usize = 10;

/// Rendering parameters; `None` fields are resolved per render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    /// mm per pixel. Auto: the rotated (x, z) bounding box fills 90% of the raster.
    pub pixel_pitch: Option<f64>,
    /// `(s0, z0)` in pixels. Auto: centres the rotated bounding box.
    pub center: Option<[f64; 2]>,
    /// Plane offset `d` in mm. Auto: max rotated y plus a 10 mm margin.
    pub plane_offset: Option<f64>,
    /// Light position in the rotated frame. Auto: on the viewing axis
    /// through the raster centre at `y = 2d`.
    pub light: Option<[f64; 3]>,
    pub splat_radius: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_IMAGE_SIZE,
            height: DEFAULT_IMAGE_SIZE,
            pixel_pitch: None,
            center: None,
            plane_offset: None,
            light: None,
            splat_radius: DEFAULT_SPLAT_RADIUS,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if let Some(p) = self.pixel_pitch {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("pixel_pitch {p} must be positive")));
            }
        }
        if !(self.splat_radius >= 0.0 && self.splat_radius.is_finite()) {
            return Err(Error::Config(format!("splat_radius {} must be >= 0", self.splat_radius)));
        }
        Ok(())
    }
}

/// Fully resolved pixel↔world calibration of one rendered view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub phi: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub s0: f64,
    pub z0: f64,
    pub plane_offset: f64,
    pub light: [f64; 3],
    pub splat_radius: f64,
}

impl Calibration {
    #[inline]
    pub fn world_to_pixel(&self, x_rot: f64, z: f64) -> (f64, f64) {
        (self.s0 + x_rot / self.pixel_pitch, self.z0 - z / self.pixel_pitch)
    }

    #[inline]
    pub fn pixel_to_world_unchecked(&self, col: f64, row: f64) -> (f64, f64) {
        ((col - self.s0) * self.pixel_pitch, (self.z0 - row) * self.pixel_pitch)
    }

    /// Inverse of [`Calibration::world_to_pixel`]; errors outside
    /// `[−0.5, W − 0.5] × [−0.5, H − 0.5]`.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> Result<(f64, f64)> {
        if !self.contains(col, row) {
            return Err(Error::PixelOutOfBounds {
                col,
                row,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.pixel_to_world_unchecked(col, row))
    }

    pub fn contains(&self, col: f64, row: f64) -> bool {
        col >= -0.5
            && col <= self.width as f64 - 0.5
            && row >= -0.5
            && row <= self.height as f64 - 0.5
    }

    /// Nearest pixel `(col, row)`, if inside the raster.
    pub fn nearest_pixel(&self, col: f64, row: f64) -> Option<(usize, usize)> {
        let (c, r) = (col.round(), row.round());
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }
}

/// A rendered view: intensity, depth buffer and winning point per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    calibration: Calibration,
    intensity: Vec<f64>,
    depth: Vec<f64>,
    selected: Vec<Option<u32>>,
}

impl ProjectionImage {
    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn width(&self) -> usize {
        self.calibration.width
    }

    pub fn height(&self) -> usize {
        self.calibration.height
    }

    pub fn phi(&self) -> f64 {
        self.calibration.phi
    }

    /// Row-major intensities in `[0, 1]`.
    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    /// Row-major rotated-y depth; NaN where no point landed.
    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn selected(&self) -> &[Option<u32>] {
        &self.selected
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> (f64, f64, Option<u32>) {
        let i = row * self.calibration.width + col;
        (self.intensity[i], self.depth[i], self.selected[i])
    }

    pub fn populated_fraction(&self) -> f64 {
        self.selected.iter().filter(|s| s.is_some()).count() as f64 / self.selected.len() as f64
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> Result<(f64, f64)> {
        self.calibration.pixel_to_world(col, row)
    }

    /// 8-bit quantised intensities, row-major.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.intensity
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// `pixel_to_world` on a rendered image.
pub fn pixel_to_world(img: &ProjectionImage, col: f64, row: f64) -> Result<(f64, f64)> {
    img.pixel_to_world(col, row)
}

fn resolve(cfg: &ProjectionConfig, phi: f64, pts: &[Point3]) -> Result<Calibration> {
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let pitch = match cfg.pixel_pitch {
        Some(p) => p,
        None => {
            let fit = ((hi[0] - lo[0]) / (AUTO_FILL * w)).max((hi[2] - lo[2]) / (AUTO_FILL * h));
            if fit > 0.0 {
                fit
            } else {
                1.0
            }
        }
    };
    let [s0, z0] = cfg.center.unwrap_or_else(|| {
        let cx = 0.5 * (lo[0] + hi[0]);
        let cz = 0.5 * (lo[2] + hi[2]);
        [0.5 * (w - 1.0) - cx / pitch, 0.5 * (h - 1.0) + cz / pitch]
    });
    let max_y = hi[1];
    let d = cfg.plane_offset.unwrap_or(max_y + AUTO_PLANE_MARGIN);
    if !(max_y < d) {
        return Err(Error::SurfaceIntersectsPlane {
            max_y,
            plane_offset: d,
        });
    }
    let light = cfg.light.unwrap_or_else(|| {
        let xc = (0.5 * (w - 1.0) - s0) * pitch;
        let zc = (z0 - 0.5 * (h - 1.0)) * pitch;
        [xc, 2.0 * d, zc]
    });
    Ok(Calibration {
        phi,
        width: cfg.width,
        height: cfg.height,
        pixel_pitch: pitch,
        s0,
        z0,
        plane_offset: d,
        light,
        splat_radius: cfg.splat_radius,
    })
}

/// Lambertian-style shading toward a point light, clamped to `[0, 1]`.
#[inline]
pub fn shade(normal: &Vector3, point: &Point3, light: &Point3) -> f64 {
    let to_light = light - point;
    let len = to_light.norm();
    if !(len > 0.0) {
        return 0.0;
    }
    (normal.dot(&to_light) / len).clamp(0.0, 1.0)
}

/// Renders the shaded projection of `surface` rotated by `phi`.
///
/// Surfaces without normals get covariance normals oriented toward +y.
pub fn render_projection(
    surface: &SurfacePointSet,
    phi: f64,
    cfg: &ProjectionConfig,
) -> Result<ProjectionImage> {
    cfg.validate()?;
    if surface.is_empty() {
        return Err(Error::EmptyInput("surface to render"));
    }
    let estimated;
    let surface = if surface.has_normals() {
        surface
    } else {
        estimated = estimate_normals(surface, NORMAL_NEIGHBOURS, NormalOrientation::default())?;
        &estimated
    };
    let normals = surface.normals().expect("normals present");
    let pts: Vec<Point3> = surface.points().iter().map(|p| rotate_about_z(p, phi)).collect();
    let nrm: Vec<Vector3> = normals
        .iter()
        .map(|n| rotate_vector_about_z(n.as_ref(), phi))
        .collect();
    let cal = resolve(cfg, phi, &pts)?;
    let (w, h) = (cal.width, cal.height);
    let radius = cal.splat_radius;
    let r2 = radius * radius;

    // Bucket points by the rows their footprint touches; buckets stay in
    // ascending point order so per-row processing matches a sequential scan.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    let mut centres = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let (c, r) = cal.world_to_pixel(p.x, p.z);
        centres.push((c, r));
        let r_lo = (r - radius).ceil().max(0.0);
        let r_hi = (r + radius).floor().min(h as f64 - 1.0);
        if r_lo > r_hi || !r_lo.is_finite() {
            continue;
        }
        for bucket in &mut rows[r_lo as usize..=r_hi as usize] {
            bucket.push(i as u32);
        }
    }

    let light = Point3::from(cal.light);
    let mut depth = vec![f64::NAN; w * h];
    let mut selected: Vec<Option<u32>> = vec![None; w * h];
    depth
        .par_chunks_mut(w)
        .zip(selected.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (drow, srow))| {
            for &i in &rows[row] {
                let (c, r) = centres[i as usize];
                let dr = row as f64 - r;
                let half = (r2 - dr * dr).max(0.0).sqrt();
                let c_lo = (c - half).ceil().max(0.0);
                let c_hi = (c + half).floor().min(w as f64 - 1.0);
                if c_lo > c_hi {
                    continue;
                }
                let y = pts[i as usize].y;
                for col in c_lo as usize..=c_hi as usize {
                    let dc = col as f64 - c;
                    if dc * dc + dr * dr > r2 {
                        continue;
                    }
                    if srow[col].is_none() || y > drow[col] {
                        drow[col] = y;
                        srow[col] = Some(i);
                    }
                }
            }
        });
    let intensity = selected
        .par_iter()
        .map(|s| match s {
            Some(i) => shade(&nrm[*i as usize], &pts[*i as usize], &light),
            None => 0.0,
        })
        .collect();
    Ok(ProjectionImage {
        calibration: cal,
        intensity,
        depth,
        selected,
    })
}

/// Fills empty pixels that have at least 5 populated pixels within a
/// `(2·max_gap + 1)²` window with the median intensity and depth of those
/// neighbours. The selected index comes from the nearest populated neighbour.
pub fn fill_holes(img: &ProjectionImage, max_gap: usize) -> ProjectionImage {
    const MIN_NEIGHBOURS: usize = 5;
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    if max_gap == 0 {
        return out;
    }
    let g = max_gap as isize;
    let mut vals = Vec::new();
    let mut deps = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if img.selected[idx].is_some() {
                continue;
            }
            vals.clear();
            deps.clear();
            let mut nearest: Option<(isize, usize)> = None;
            for dr in -g..=g {
                let r = row as isize + dr;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for dc in -g..=g {
                    let c = col as isize + dc;
                    if c < 0 || c >= w as isize {
                        continue;
                    }
                    let j = r as usize * w + c as usize;
                    if img.selected[j].is_some() {
                        vals.push(img.intensity[j]);
                        deps.push(img.depth[j]);
                        let d2 = dr * dr + dc * dc;
                        if nearest.is_none_or(|(best, bj)| d2 < best || (d2 == best && j < bj)) {
                            nearest = Some((d2, j));
                        }
                    }
                }
            }
            if vals.len() >= MIN_NEIGHBOURS {
                out.intensity[idx] = median(&mut vals);
                out.depth[idx] = median(&mut deps);
                out.selected[idx] = nearest.and_then(|(_, j)| img.selected[j]);
            }
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Raster formats for exported projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Png,
    Pgm,
}

/// Writes the 8-bit raster and a calibration sidecar (`<stem>.json`).
/// Returns the sidecar path.
pub fn export_projection(img: &ProjectionImage, raster_path: &Path, format: RasterFormat) -> Result<PathBuf> {
    let gray = img.to_gray8();
    let (w, h) = (img.width(), img.height());
    match format {
        RasterFormat::Png => {
            let buf = image::GrayImage::from_raw(w as u32, h as u32, gray)
                .ok_or_else(|| Error::InvalidInput("raster size mismatch".into()))?;
            buf.save_with_format(raster_path, image::ImageFormat::Png).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(raster_path, io),
                other => Error::InvalidInput(format!("png encoding failed: {other}")),
            })?;
        }
        RasterFormat::Pgm => {
            let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
            bytes.extend_from_slice(&gray);
            fs::write(raster_path, bytes).map_err(|e| Error::io(raster_path, e))?;
        }
    }
    let sidecar = raster_path.with_extension("json");
    save_calibration(&sidecar, img.calibration())?;
    Ok(sidecar)
}

pub fn save_calibration(path: &Path, cal: &Calibration) -> Result<()> {
    let json = serde_json::to_string_pretty(cal)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn one_point(normal: Vector3) -> SurfacePointSet {
        SurfacePointSet::with_normals(vec![Point3::origin()], vec![Unit::new_normalize(normal)]).unwrap()
    }

    fn small_cfg() -> ProjectionConfig {
        ProjectionConfig {
            width: 21,
            height: 21,
            pixel_pitch: Some(1.0),
            center: Some([10.0, 10.0]),
            plane_offset: Some(50.0),
            light: Some([0.0, 1e6, 0.0]),
            splat_radius: 0.0,
        }
    }

    #[test]
    fn aligned_point_is_fully_lit() {
        let img = render_projection(&one_point(Vector3::y()), 0.0, &small_cfg()).unwrap();
        let (i, d, s) = img.at(10, 10);
        assert!((i - 1.0).abs() < 1e-9);
        assert_eq!(d, 0.0);
        assert_eq!(s, Some(0));
        let lit = img.intensity().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(lit, 1);
    }

    #[test]
    fn back_facing_point_is_clamped_to_zero() {
        let img = render_projection(&one_point(-Vector3::y()), 0.0, &small_cfg()).unwrap();
        let (i, _, s) = img.at(10, 10);
        assert_eq!(i, 0.0);
        assert_eq!(s, Some(0));
    }

    #[test]
    fn plane_must_clear_surface() {
        let mut cfg = small_cfg();
        cfg.plane_offset = Some(0.0);
        assert!(matches!(
            render_projection(&one_point(Vector3::y()), 0.0, &cfg),
            Err(Error::SurfaceIntersectsPlane { .. })
        ));
    }

    fn hemisphere(n: usize) -> SurfacePointSet {
        let golden = PI * (3.0 - 5f64.sqrt());
        let (mut pts, mut nrm) = (Vec::new(), Vec::new());
        for i in 0..n {
            let y = (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let v = Vector3::new(r * th.cos(), y, r * th.sin());
            pts.push(Point3::from(v * 30.0));
            nrm.push(Unit::new_normalize(v));
        }
        SurfacePointSet::with_normals(pts, nrm).unwrap()
    }

    #[test]
    fn brightest_pixel_matches_exhaustive_shading() {
        let s = hemisphere(4000);
        let cfg = ProjectionConfig {
            width: 96,
            height: 96,
            light: Some([0.0, 120.0, 0.0]),
            ..ProjectionConfig::default()
        };
        let img = render_projection(&s, 0.0, &cfg).unwrap();
        let light = Point3::new(0.0, 120.0, 0.0);
        let best = s
            .points()
            .iter()
            .zip(s.normals().unwrap())
            .map(|(p, n)| shade(n, p, &light))
            .fold(f64::NEG_INFINITY, f64::max);
        let brightest = img.intensity().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((brightest - best).abs() < 1e-12, "{brightest} vs {best}");
        assert!(img.intensity().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn depth_selection_is_front_most() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..300)
            .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        let nrm = vec![Unit::new_normalize(Vector3::y()); 300];
        let s = SurfacePointSet::with_normals(pts, nrm).unwrap();
        let cfg = ProjectionConfig { width: 12, height: 12, splat_radius: 1.5, ..ProjectionConfig::default() };
        let phi = 0.3;
        let img = render_projection(&s, phi, &cfg).unwrap();
        let cal = *img.calibration();
        for row in 0..12 {
            for col in 0..12 {
                let (_, d, sel) = img.at(col, row);
                let cands: Vec<(usize, f64)> = s
                    .points()
                    .iter()
                    .enumerate()
                    .filter_map(|(i, p)| {
                        let q = rotate_about_z(p, phi);
                        let (c, r) = cal.world_to_pixel(q.x, q.z);
                        let dd = (col as f64 - c).powi(2) + (row as f64 - r).powi(2);
                        (dd <= 1.5 * 1.5).then_some((i, q.y))
                    })
                    .collect();
                match sel {
                    None => assert!(cands.is_empty()),
                    Some(i) => {
                        assert!(cands.iter().all(|&(_, y)| y <= d));
                        let first_max = cands.iter().find(|&&(_, y)| y == d).unwrap().0;
                        assert_eq!(first_max, i as usize);
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_equivariance() {
        let s = hemisphere(2000);
        let phi = 0.37;
        let cfg = ProjectionConfig { width: 64, height: 64, ..ProjectionConfig::default() };
        let a = render_projection(&s, phi, &cfg).unwrap();
        let rotated = crate::geometry::apply_transform(&crate::RigidTransform::about_z(phi), &s).unwrap();
        let b = render_projection(&rotated, 0.0, &cfg).unwrap();
        assert_eq!(a.selected(), b.selected());
        for (x, y) in a.intensity().iter().zip(b.intensity()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn shading_depends_only_on_light_direction() {
        let n = Vector3::new(0.3, 0.9, 0.1).normalize();
        let p = Point3::new(1.0, 2.0, 3.0);
        let dir = Vector3::new(0.2, 1.0, -0.4);
        let a = shade(&n, &p, &(p + dir));
        let b = shade(&n, &p, &(p + dir * 1234.5));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pixel_world_mapping() {
        let cal = Calibration {
            phi: 0.0,
            width: 100,
            height: 80,
            pixel_pitch: 0.5,
            s0: 40.0,
            z0: 30.0,
            plane_offset: 100.0,
            light: [0.0, 200.0, 0.0],
            splat_radius: 1.5,
        };
        assert_eq!(cal.pixel_to_world(40.0, 30.0).unwrap(), (0.0, 0.0));
        assert_eq!(cal.pixel_to_world(50.0, 30.0).unwrap(), (5.0, 0.0));
        assert!(cal.pixel_to_world(100.0, 3.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (x, z) = (rng.random_range(-19.0..29.0), rng.random_range(-24.0..14.0));
            let (c, r) = cal.world_to_pixel(x, z);
            let (x2, z2) = cal.pixel_to_world(c, r).unwrap();
            assert!((x - x2).abs() < 1e-9 && (z - z2).abs() < 1e-9);
        }
    }

    fn synthetic(pop: impl Fn(usize, usize) -> bool, w: usize, h: usize, value: f64) -> ProjectionImage {
        let mut img = ProjectionImage {
            calibration: Calibration {
                phi: 0.0,
                width: w,
                height: h,
                pixel_pitch: 1.0,
                s0: 0.0,
                z0: 0.0,
                plane_offset: 10.0,
                light: [0.0, 20.0, 0.0],
                splat_radius: 1.5,
            },
            intensity: vec![0.0; w * h],
            depth: vec![f64::NAN; w * h],
            selected: vec![None; w * h],
        };
        for r in 0..h {
            for c in 0..w {
                if pop(c, r) {
                    let i = r * w + c;
                    img.intensity[i] = value;
                    img.depth[i] = 1.0;
                    img.selected[i] = Some(i as u32);
                }
            }
        }
        img
    }

    #[test]
    fn fill_holes_cases() {
        let full = synthetic(|_, _| true, 8, 8, 0.3);
        assert_eq!(fill_holes(&full, 2), full);

        let single = synthetic(|c, r| !(c == 4 && r == 4), 9, 9, 0.5);
        let filled = fill_holes(&single, 1);
        assert_eq!(filled.at(4, 4).0, 0.5);
        assert!(filled.at(4, 4).2.is_some());

        let checker = synthetic(|c, r| (c + r) % 2 == 0, 64, 64, 0.7);
        let filled = fill_holes(&checker, 2);
        assert!(filled.populated_fraction() >= 0.99);

        // A big hole stays open in its interior.
        let holed = synthetic(|c, r| !(10..30).contains(&c) || !(10..30).contains(&r), 40, 40, 0.2);
        let filled = fill_holes(&holed, 2);
        assert!(filled.at(20, 20).2.is_none());
    }

    #[test]
    fn export_writes_raster_and_sidecar() {
        let img = render_projection(&hemisphere(500), 0.1, &ProjectionConfig { width: 32, height: 24, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("view.png");
        let side = export_projection(&img, &png, RasterFormat::Png).unwrap();
        assert_eq!(load_calibration(&side).unwrap(), *img.calibration());
        let decoded = image::open(&png).unwrap().to_luma8();
        assert_eq!(decoded.into_raw(), img.to_gray8());
        let pgm = dir.path().join("view.pgm");
        export_projection(&img, &pgm, RasterFormat::Pgm).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n32 24\n255\n"));
        assert_eq!(bytes.len(), 13 + 32 * 24);
    }
}
