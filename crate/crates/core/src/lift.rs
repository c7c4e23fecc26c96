//! Closed-form 3D reconstruction of a landmark from its x-coordinates in two
//! views rotated about the z-axis.
//!
//! A point at radius `L` from the axis and angle `θ` sits at
//! `(−L sinθ, L cosθ, z)`; rotated by `φ` its image x-coordinate is
//! `x^φ = −L sin(θ + φ)`. Two such observations at distinct angles determine
//! `L` and `θ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::detect::LandmarkSet2D;
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

pub const MIN_ABS_SIN: f64 = 1e-6;
pub const DOMAIN_SLACK: f64 = 1e-9;
pub const DEFAULT_PHI1: f64 = PI / 9.0;
pub const DEFAULT_PHI2: f64 = -PI / 9.0;

/// One reconstructed landmark. `z_discrepancy` is `|z¹ − z²|` between the two
/// views (0 for ground truth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landmark3D {
    pub index: u32,
    pub point: [f64; 3],
    #[serde(default)]
    pub z_discrepancy: f64,
}

impl Landmark3D {
    pub fn position(&self) -> Point3 {
        Point3::from(self.point)
    }
}

/// Landmarks sorted by index, unique and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LandmarkSet3DWire")]
pub struct LandmarkSet3D {
    landmarks: Vec<Landmark3D>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkSet3DWire {
    landmarks: Vec<Landmark3D>,
}

impl TryFrom<LandmarkSet3DWire> for LandmarkSet3D {
    type Error = Error;

    fn try_from(w: LandmarkSet3DWire) -> Result<Self> {
        LandmarkSet3D::from_landmarks(w.landmarks)
    }
}

impl LandmarkSet3D {
    pub fn new(points: impl IntoIterator<Item = (u32, Point3)>) -> Result<Self> {
        Self::from_landmarks(
            points
                .into_iter()
                .map(|(index, p)| Landmark3D {
                    index,
                    point: [p.x, p.y, p.z],
                    z_discrepancy: 0.0,
                })
                .collect(),
        )
    }

    pub fn from_landmarks(mut landmarks: Vec<Landmark3D>) -> Result<Self> {
        landmarks.sort_by_key(|l| l.index);
        for w in landmarks.windows(2) {
            if w[0].index == w[1].index {
                return Err(Error::InvalidInput(format!("duplicate landmark index {}", w[0].index)));
            }
        }
        if let Some(l) = landmarks
            .iter()
            .find(|l| !l.point.iter().all(|v| v.is_finite()) || !l.z_discrepancy.is_finite())
        {
            return Err(Error::InvalidInput(format!("landmark {} is not finite", l.index)));
        }
        Ok(Self { landmarks })
    }

    pub fn landmarks(&self) -> &[Landmark3D] {
        &self.landmarks
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

    pub fn points(&self) -> Vec<Point3> {
        self.landmarks.iter().map(Landmark3D::position).collect()
    }

    pub fn get(&self, index: u32) -> Option<&Landmark3D> {
        self.landmarks
            .binary_search_by_key(&index, |l| l.index)
            .ok()
            .map(|i| &self.landmarks[i])
    }

    /// Keeps only the listed indices (those present).
    pub fn subset(&self, indices: &[u32]) -> Self {
        Self {
            landmarks: self
                .landmarks
                .iter()
                .filter(|l| indices.contains(&l.index))
                .copied()
                .collect(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            landmarks: self
                .landmarks
                .iter()
                .map(|l| {
                    let p = t.apply_point(&l.position());
                    Landmark3D {
                        point: [p.x, p.y, p.z],
                        ..*l
                    }
                })
                .collect(),
        }
    }
}

/// Two projection angles about the z-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnglePairWire")]
pub struct AnglePair {
    phi1: f64,
    phi2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnglePairWire {
    phi1: f64,
    phi2: f64,
}

impl TryFrom<AnglePairWire> for AnglePair {
    type Error = Error;

    fn try_from(w: AnglePairWire) -> Result<Self> {
        AnglePair::new(w.phi1, w.phi2)
    }
}

impl Default for AnglePair {
    fn default() -> Self {
        Self {
            phi1: DEFAULT_PHI1,
            phi2: DEFAULT_PHI2,
        }
    }
}

impl AnglePair {
    pub fn new(phi1: f64, phi2: f64) -> Result<Self> {
        if !(phi1.is_finite() && phi2.is_finite()) {
            return Err(Error::InvalidAngles(format!("non-finite angles ({phi1}, {phi2})")));
        }
        if (phi1 - phi2).sin().abs() <= MIN_ABS_SIN {
            return Err(Error::InvalidAngles(format!(
                "sin(phi1 - phi2) = {:e} is too close to 0 (phi1 = {phi1}, phi2 = {phi2})",
                (phi1 - phi2).sin()
            )));
        }
        Ok(Self { phi1, phi2 })
    }

    /// `φ₁ = ε/2`, `φ₂ = −ε/2`.
    pub fn symmetric(epsilon: f64) -> Result<Self> {
        Self::new(0.5 * epsilon, -0.5 * epsilon)
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }

    pub fn phi2(&self) -> f64 {
        self.phi2
    }

    /// `ε = |φ₁ − φ₂|`.
    pub fn epsilon(&self) -> f64 {
        (self.phi1 - self.phi2).abs()
    }

    /// True when `ε ≤ π/9` or `ε ≥ π/3`, where lifting is known to be unreliable.
    pub fn warning(&self) -> bool {
        let e = self.epsilon();
        e <= PI / 9.0 || e >= PI / 3.0
    }
}

/// `x^φ` of a point: its x-coordinate after rotation by `φ` about z.
#[inline]
pub fn forward_project(p: &Point3, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    c * p.x - s * p.y
}

/// Lifting result with its intermediates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftDetail {
    pub point: Point3,
    /// Distance from the rotation axis.
    pub radius: f64,
    /// Polar angle `θ`, with the point at `(−L sinθ, L cosθ, z)`.
    pub theta: f64,
    /// `θ + φ₁`, recovered from the first view.
    pub theta1: f64,
    /// `θ + φ₂`, recovered independently from the second view.
    pub theta2: f64,
}

/// Recovers the point whose views at `angles` have x-coordinates `x1`, `x2`.
pub fn lift_landmark(x1: f64, x2: f64, z: f64, angles: &AnglePair) -> Result<Point3> {
    lift_landmark_detailed(x1, x2, z, angles).map(|d| d.point)
}

pub fn lift_landmark_detailed(x1: f64, x2: f64, z: f64, angles: &AnglePair) -> Result<LiftDetail> {
    if !(x1.is_finite() && x2.is_finite() && z.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite observation ({x1}, {x2}, {z})")));
    }
    let (phi1, phi2) = (angles.phi1, angles.phi2);
    let (sd, cd) = (phi1 - phi2).sin_cos();
    // L·cosθᵢ for each view.
    let c1 = (x2 - x1 * cd) / sd;
    let c2 = (x2 * cd - x1) / sd;
    let radius = c1.hypot(x1);
    if radius == 0.0 {
        if x1 != 0.0 || x2 != 0.0 {
            return Err(Error::InconsistentObservation { x1, x2 });
        }
        return Ok(LiftDetail {
            point: Point3::new(0.0, 0.0, z),
            radius: 0.0,
            theta: 0.0,
            theta1: phi1,
            theta2: phi2,
        });
    }
    if (x1 / radius).abs() > 1.0 + DOMAIN_SLACK {
        return Err(Error::ArcsineDomain { x1, radius });
    }
    let slack = DOMAIN_SLACK * radius;
    if c1 < -slack {
        return Err(Error::OutOfHemisphere { depth: c1 });
    }
    let theta1 = (-x1).atan2(c1.max(0.0));
    let theta2 = (-x2).atan2(c2);
    let (s1, co1) = phi1.sin_cos();
    let point = Point3::new(x1 * co1 + c1 * s1, c1 * co1 - x1 * s1, z);
    Ok(LiftDetail {
        point,
        radius,
        theta: theta1 - phi1,
        theta1,
        theta2,
    })
}

/// Lifts every landmark present in both views. `z` is the mean of the two
/// views' `z_world`; the discrepancy is kept per landmark.
pub fn lift_landmark_set(a: &LandmarkSet2D, b: &LandmarkSet2D) -> Result<LandmarkSet3D> {
    let angles = AnglePair::new(a.source_phi(), b.source_phi())?;
    let ia: Vec<u32> = a.landmarks().iter().map(|l| l.index).collect();
    let ib: Vec<u32> = b.landmarks().iter().map(|l| l.index).collect();
    let common = ia.iter().filter(|i| ib.contains(i)).count();
    if common < 3 {
        return Err(Error::InsufficientLandmarks { found: common });
    }
    let mut missing: Vec<u32> = ia
        .iter()
        .filter(|i| !ib.contains(i))
        .chain(ib.iter().filter(|i| !ia.contains(i)))
        .copied()
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(Error::IndexMismatch { missing });
    }
    let landmarks = a
        .landmarks()
        .iter()
        .zip(b.landmarks())
        .map(|(la, lb)| {
            let z = 0.5 * (la.z_world + lb.z_world);
            let p = lift_landmark(la.x_world, lb.x_world, z, &angles)?;
            Ok(Landmark3D {
                index: la.index,
                point: [p.x, p.y, p.z],
                z_discrepancy: (la.z_world - lb.z_world).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LandmarkSet3D::from_landmarks(landmarks)
}

/// First-order expected `|L − L̂|` for i.i.d. Gaussian noise of scale
/// `noise` (mm) on both observations: `(2·noise/√π)/ε`.
pub fn amplification_estimate(angles: &AnglePair, noise: f64) -> Result<f64> {
    let eps = angles.epsilon();
    if !(eps > 0.0 && eps < PI) {
        return Err(Error::InvalidAngles(format!("epsilon {eps} outside (0, pi)")));
    }
    Ok(2.0 * noise / PI.sqrt() / eps)
}
