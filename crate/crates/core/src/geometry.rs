//! Core 3D types: points, unit normals, surface point sets and rigid transforms.
//!
//! Coordinates are millimetres in a right-handed frame. Faces are expected to
//! look toward +y, so the projection plane sits at `y = d` in front of them.

use nalgebra::{Matrix3, Matrix4, Rotation3, SymmetricEigen, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::KdTree;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type UnitVector3 = Unit<Vector3>;

const ORTHO_TOL: f64 = 1e-9;

/// Rotates `p` about the z-axis by `phi` radians.
#[inline]
pub fn rotate_about_z(p: &Point3, phi: f64) -> Point3 {
    let (s, c) = phi.sin_cos();
    Point3::new(p.x * c - p.y * s, p.x * s + p.y * c, p.z)
}

#[inline]
pub(crate) fn rotate_vector_about_z(v: &Vector3, phi: f64) -> Vector3 {
    let (s, c) = phi.sin_cos();
    Vector3::new(v.x * c - v.y * s, v.x * s + v.y * c, v.z)
}

/// A point cloud with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    points: Vec<Point3>,
    normals: Option<Vec<UnitVector3>>,
}

impl SurfacePointSet {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point3>, normals: Vec<UnitVector3>) -> Result<Self> {
        check_finite(&points)?;
        if normals.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                found: normals.len(),
            });
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[UnitVector3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Keeps the points whose index satisfies `keep`, preserving order.
    pub fn filter_indices(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut points = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        for i in 0..self.points.len() {
            if keep(i) {
                points.push(self.points[i]);
                if let (Some(out), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        Self { points, normals }
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<UnitVector3>>) {
        (self.points, self.normals)
    }

    /// Axis-aligned bounding box `(min, max)`; `None` when empty.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (
                Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }
}

fn check_finite(points: &[Point3]) -> Result<()> {
    match points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

/// Rotation plus translation, `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is proper orthogonal within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if !(err <= ORTHO_TOL) || !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::InvalidInput(format!(
                "rotation is not proper orthogonal (|RᵀR − I| = {err:e}, det = {det})"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about `axis` (normalised internally), then translation.
    pub fn from_axis_angle(axis: Vector3, angle: f64, translation: Vector3) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *r.matrix(),
            translation,
        }
    }

    pub fn about_z(phi: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), phi, Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    #[inline]
    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [[f64; 4]; 4] {
        let m = self.to_homogeneous();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_row_major(rows: &[[f64; 4]; 4]) -> Result<Self> {
        let bottom = rows[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput(format!(
                "homogeneous matrix bottom row must be [0,0,0,1], got {bottom:?}"
            )));
        }
        let rot = Matrix3::from_fn(|r, c| rows[r][c]);
        let t = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rot, t)
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`, computed from the chord
    /// `‖R₁ − R₂‖_F = 2√2·sin(θ/2)`, which stays accurate near zero.
    pub fn rotation_distance(&self, other: &RigidTransform) -> f64 {
        let chord = (self.rotation - other.rotation).norm();
        2.0 * (chord / (2.0 * std::f64::consts::SQRT_2)).min(1.0).asin()
    }

    pub fn translation_distance(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Maps every point by `R·p + t` and every normal by `R`.
pub fn apply_transform(t: &RigidTransform, set: &SurfacePointSet) -> Result<SurfacePointSet> {
    if set.is_empty() {
        return Err(Error::EmptyInput("point set"));
    }
    Ok(apply_transform_unchecked(t, set))
}

pub(crate) fn apply_transform_unchecked(t: &RigidTransform, set: &SurfacePointSet) -> SurfacePointSet {
    let points = set.points.iter().map(|p| t.apply_point(p)).collect();
    let normals = set.normals.as_ref().map(|ns| {
        ns.iter()
            .map(|n| Unit::new_unchecked(t.apply_vector(n.as_ref())))
            .collect()
    });
    SurfacePointSet { points, normals }
}

/// How covariance normals resolve their sign ambiguity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation {
    /// Positive dot product with a fixed direction.
    Toward(Vector3),
    /// Pointing away from a centre point (radial orientation).
    AwayFrom(Point3),
}

impl Default for NormalOrientation {
    fn default() -> Self {
        NormalOrientation::Toward(Vector3::y())
    }
}

impl NormalOrientation {
    pub(crate) fn reference_at(&self, p: &Point3) -> Vector3 {
        match self {
            NormalOrientation::Toward(v) => *v,
            NormalOrientation::AwayFrom(c) => p - c,
        }
    }
}

/// Assigns each point the smallest-eigenvalue direction of the covariance of
/// its `k` nearest neighbours (plus itself), oriented by `orientation`.
pub fn estimate_normals(
    set: &SurfacePointSet,
    k: usize,
    orientation: NormalOrientation,
) -> Result<SurfacePointSet> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("neighbour count k = {k} must be at least 3")));
    }
    if let Some(first) = set.points.first() {
        if set.points.iter().all(|p| p == first) {
            return Err(Error::DegenerateNeighborhood { index: 0 });
        }
    }
    if set.len() < k + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least k + 1 = {} points for normal estimation, got {}",
            k + 1,
            set.len()
        )));
    }
    let tree = KdTree::build(set.points());
    let mut normals = Vec::with_capacity(set.len());
    for (i, p) in set.points.iter().enumerate() {
        let neighbours = tree.k_nearest(p, k + 1);
        let n = neighbours.len() as f64;
        let centroid = neighbours
            .iter()
            .fold(Vector3::zeros(), |acc, &(j, _)| acc + set.points[j].coords)
            / n;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &neighbours {
            let d = set.points[j].coords - centroid;
            cov += d * d.transpose();
        }
        let scale = cov.amax();
        if !(scale > 0.0) {
            return Err(Error::DegenerateNeighborhood { index: i });
        }
        let eig = SymmetricEigen::new(cov / scale);
        let smallest = eig.eigenvalues.imin();
        let mut normal: Vector3 = eig.eigenvectors.column(smallest).into_owned();
        if normal.dot(&orientation.reference_at(p)) < 0.0 {
            normal = -normal;
        }
        normals.push(Unit::new_normalize(normal));
    }
    Ok(SurfacePointSet {
        points: set.points.clone(),
        normals: Some(normals),
    })
}
