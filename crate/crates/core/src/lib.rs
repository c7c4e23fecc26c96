//! Rigid registration of two 3D facial surfaces through shaded 2D projections.
//!
//! The pipeline renders each surface at two rotation angles about the vertical
//! axis, detects 2D landmarks in the renders, lifts matched landmarks back to 3D
//! in closed form, solves a least-squares rigid transform from the landmark
//! pairs and refines it with point-to-point ICP on landmark-anchored
//! sub-surfaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod lift;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod render;
pub mod spatial;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{
    apply_transform, estimate_normals, rotate_about_z, NormalOrientation, Point3, RigidTransform,
    SurfacePointSet, UnitVector3, Vector3,
};
pub use render::{render_projection, Calibration, ProjectionConfig, ProjectionImage};
pub use detect::{DetectorKind, DetectorSpec, Landmark2D, LandmarkSet2D};
pub use lift::{lift_landmark, lift_landmark_set, AnglePair, Landmark3D, LandmarkSet3D};
pub use metrics::{point_error, signed_distance, surface_error, SurfaceErrorReport};
pub use registration::{icp_refine, select_subsurface, solve_landmark_transform, IcpConfig, RegistrationReport};
pub use pipeline::{run_register, PipelineConfig};
pub use registration::TransformRecord;
