//! Rigid alignment: least-squares solve from landmark pairs, landmark-anchored
//! sub-surface selection and point-to-point ICP refinement.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform, SurfacePointSet, Vector3};
use crate::lift::LandmarkSet3D;
use crate::metrics::{nearest_distances, summarise, SurfaceErrorReport};
use crate::spatial::KdTree;

pub const DEFAULT_SUBSURFACE_RADIUS: f64 = 25.0;
/// Second-largest over largest covariance eigenvalue below which a point
/// configuration counts as collinear.
pub const COLLINEAR_RATIO: f64 = 1e-9;
pub const TRANSFORM_CONVENTION: &str =
    "row-major 4x4 homogeneous matrix M; a source point p maps to M * [p, 1]";

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
///
/// Centroids are subtracted, the cross-covariance is decomposed by SVD and
/// the sign of the smallest singular direction is flipped when needed so the
/// result is a proper rotation.
pub fn solve_point_pairs(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            expected: src.len(),
            found: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::InsufficientLandmarks { found: src.len() });
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd.coords - r * cs.coords;
    Ok(RigidTransform::from_parts_unchecked(r, t))
}

fn centroid(p: &[Point3]) -> Point3 {
    let sum = p.iter().fold(Vector3::zeros(), |acc, q| acc + q.coords);
    Point3::from(sum / p.len() as f64)
}

/// Eigenvalues of the point covariance, largest first.
fn spread(p: &[Point3]) -> [f64; 3] {
    let c = centroid(p);
    let mut cov = Matrix3::zeros();
    for q in p {
        let d = q - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

fn check_not_collinear(name: &str, p: &[Point3]) -> Result<()> {
    let ev = spread(p);
    if !(ev[0] > 0.0) || !(ev[1] / ev[0] > COLLINEAR_RATIO) {
        return Err(Error::DegenerateConfiguration(format!(
            "{name} landmarks are collinear or coincident (covariance eigenvalues {:.3e}, {:.3e}, {:.3e})",
            ev[0], ev[1], ev[2]
        )));
    }
    Ok(())
}

/// Rigid transform minimising `Σ ‖T·src_j − dst_j‖²` over common indices.
pub fn solve_landmark_transform(src: &LandmarkSet3D, dst: &LandmarkSet3D) -> Result<RigidTransform> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for l in src.landmarks() {
        if let Some(m) = dst.get(l.index) {
            a.push(l.position());
            b.push(m.position());
        }
    }
    if a.len() < 3 {
        return Err(Error::InsufficientLandmarks { found: a.len() });
    }
    check_not_collinear("source", &a)?;
    check_not_collinear("target", &b)?;
    solve_point_pairs(&a, &b)
}

/// Points of `s` within `radius` of any landmark, in original order.
pub fn select_subsurface(s: &SurfacePointSet, ldmk: &LandmarkSet3D, radius: f64) -> Result<SurfacePointSet> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("sub-surface radius {radius} must be positive")));
    }
    if ldmk.is_empty() {
        return Err(Error::EmptyInput("landmark set"));
    }
    let centres = ldmk.points();
    let tree = KdTree::build(&centres);
    let r2 = radius * radius;
    let keep: Vec<bool> = s
        .points()
        .par_iter()
        .map(|p| tree.nearest(p).is_some_and(|(_, d2)| d2 <= r2))
        .collect();
    let out = s.filter_indices(|i| keep[i]);
    if out.is_empty() {
        return Err(Error::EmptySubsurface);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the RMS residual improves by less than this (mm).
    pub tolerance: f64,
    /// Correspondences farther apart than this are ignored. `None` keeps all.
    pub max_correspondence_distance: Option<f64>,
    pub leaf_size: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-4,
            max_correspondence_distance: None,
            leaf_size: 16,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("icp max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("icp tolerance {} must be > 0", self.tolerance)));
        }
        if let Some(d) = self.max_correspondence_distance {
            if !(d > 0.0) {
                return Err(Error::Config(format!("max_correspondence_distance {d} must be > 0")));
            }
        }
        if self.leaf_size < 1 {
            return Err(Error::Config("icp leaf_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Transform in its interchange form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    pub matrix: [[f64; 4]; 4],
    #[serde(default = "default_convention")]
    pub convention: String,
}

fn default_convention() -> String {
    TRANSFORM_CONVENTION.to_string()
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        Self {
            matrix: t.to_row_major(),
            convention: TRANSFORM_CONVENTION.to_string(),
        }
    }
}

impl TransformRecord {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        RigidTransform::from_row_major(&self.matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub initial_transform: TransformRecord,
    pub final_transform: TransformRecord,
    /// RMS correspondence distance, before the first iteration and after each.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Distances of the source under the initial transform.
    pub initial_metrics: SurfaceErrorReport,
    pub final_metrics: SurfaceErrorReport,
}

impl RegistrationReport {
    pub fn initial(&self) -> RigidTransform {
        self.initial_transform.to_transform().expect("written from a valid transform")
    }

    pub fn transform(&self) -> RigidTransform {
        self.final_transform.to_transform().expect("written from a valid transform")
    }
}

struct Matches {
    pairs: Vec<(usize, usize)>,
    rms: f64,
    distances: Vec<f64>,
}

fn correspond(moved: &SurfacePointSet, tree: &KdTree, max_dist: Option<f64>) -> Result<Matches> {
    let nn = nearest_distances(moved, tree);
    let mut pairs = Vec::with_capacity(nn.len());
    let mut sum2 = 0.0;
    for (i, &(j, d)) in nn.iter().enumerate() {
        if max_dist.is_none_or(|m| d <= m) {
            pairs.push((i, j));
            sum2 += d * d;
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(Matches {
        rms: (sum2 / pairs.len() as f64).sqrt(),
        pairs,
        distances: nn.into_iter().map(|(_, d)| d).collect(),
    })
}

fn moved(src: &SurfacePointSet, t: &RigidTransform) -> SurfacePointSet {
    crate::geometry::apply_transform_unchecked(t, src)
}

/// Point-to-point ICP from `init`. Each iteration re-solves the rigid
/// increment for the current nearest-neighbour pairs and composes it onto the
/// running transform.
pub fn icp_refine(
    src: &SurfacePointSet,
    dst: &SurfacePointSet,
    init: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<RegistrationReport> {
    cfg.validate()?;
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptySubsurface);
    }
    let tree = KdTree::with_leaf_size(dst.points(), cfg.leaf_size);
    let mut t = *init;
    let mut current = moved(src, &t);
    let mut m = correspond(&current, &tree, cfg.max_correspondence_distance)?;
    let initial_metrics = summarise(m.distances.clone()).summary();
    let mut residuals = vec![m.rms];
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let a: Vec<Point3> = m.pairs.iter().map(|&(i, _)| current.points()[i]).collect();
        let b: Vec<Point3> = m.pairs.iter().map(|&(_, j)| dst.points()[j]).collect();
        let step = if m.rms == 0.0 {
            RigidTransform::identity()
        } else if a.len() >= 3 {
            solve_point_pairs(&a, &b)?
        } else {
            RigidTransform::from_translation(b[0] - a[0])
        };
        t = step.compose(&t);
        current = moved(src, &t);
        let next = correspond(&current, &tree, cfg.max_correspondence_distance)?;
        iterations += 1;
        let improvement = m.rms - next.rms;
        residuals.push(next.rms);
        m = next;
        if improvement < cfg.tolerance {
            break;
        }
    }
    Ok(RegistrationReport {
        initial_transform: TransformRecord::from(init),
        final_transform: TransformRecord::from(&t),
        residuals,
        iterations,
        initial_metrics,
        final_metrics: summarise(m.distances).summary(),
    })
}
