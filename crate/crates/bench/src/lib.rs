//! Shared fixtures for the benchmarks.

use facereg_core::synth::{generate_head, SyntheticHead, SyntheticHeadSpec};
use facereg_core::{LandmarkSet3D, RigidTransform, TransformRecord, Vector3};

pub fn head(density: f64, seed: u64) -> SyntheticHead {
    generate_head(&SyntheticHeadSpec {
        density,
        seed,
        ..Default::default()
    })
    .expect("default head spec is valid")
}

pub fn pose() -> RigidTransform {
    RigidTransform::from_axis_angle(Vector3::new(0.1, 1.0, -0.2), 0.06, Vector3::new(3.0, -2.0, 1.0))
}

/// Same geometry as [`head`], independently sampled and moved by [`pose`].
pub fn posed_head(density: f64, seed: u64) -> SyntheticHead {
    generate_head(&SyntheticHeadSpec {
        density,
        seed,
        pose: Some(TransformRecord::from(&pose())),
        ..Default::default()
    })
    .expect("default head spec is valid")
}

pub fn moved(l: &LandmarkSet3D) -> LandmarkSet3D {
    l.transformed(&pose())
}
