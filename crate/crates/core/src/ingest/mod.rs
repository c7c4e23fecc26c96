//! Surface input/output and isosurface extraction from voxel volumes.

pub mod marching_cubes;
pub mod mesh;
pub mod obj;
pub mod ply;
pub mod volume;

use std::fs;
use std::path::Path;

use nalgebra::Unit;

pub use marching_cubes::{extract_isosurface, Orientation};
pub use mesh::{mesh_to_point_set, TriangleMesh};
pub use ply::PlyEncoding;
pub use volume::{load_volume, save_volume, ScalarVolume, VolumeEncoding};

use crate::error::{Error, Result};
use crate::geometry::{Point3, SurfacePointSet, UnitVector3, Vector3};

/// Soft-tissue/air boundary used for CT-derived face surfaces.
pub const DEFAULT_THRESHOLD_HU: f64 = -500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceFormat {
    Ply(PlyEncoding),
    Obj,
}

impl SurfaceFormat {
    /// Guesses from the extension; PLY defaults to binary on write.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ply") => Ok(SurfaceFormat::Ply(PlyEncoding::BinaryLittleEndian)),
            Some("obj") => Ok(SurfaceFormat::Obj),
            _ => Err(Error::InvalidInput(format!(
                "cannot infer surface format from {}",
                path.display()
            ))),
        }
    }
}

/// A loaded surface: a bare point cloud or a triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Points(SurfacePointSet),
    Mesh(TriangleMesh),
}

impl Surface {
    /// Point set view; meshes contribute area-weighted vertex normals.
    pub fn into_point_set(self) -> Result<SurfacePointSet> {
        match self {
            Surface::Points(p) => Ok(p),
            Surface::Mesh(m) => mesh_to_point_set(&m, Vector3::y()),
        }
    }
}

fn to_points(v: &[[f64; 3]]) -> Vec<Point3> {
    v.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

fn to_normals(v: &[[f64; 3]], fallback: Vector3) -> Vec<UnitVector3> {
    let fallback = Unit::new_normalize(fallback);
    v.iter()
        .map(|n| Unit::try_new(Vector3::new(n[0], n[1], n[2]), 1e-300).unwrap_or(fallback))
        .collect()
}

fn assemble(vertices: &[[f64; 3]], normals: Option<&[[f64; 3]]>, faces: Vec<[u32; 3]>) -> Result<Surface> {
    let points = to_points(vertices);
    let normals = normals.map(|n| to_normals(n, Vector3::y()));
    if faces.is_empty() {
        let set = match normals {
            Some(n) => SurfacePointSet::with_normals(points, n)?,
            None => SurfacePointSet::new(points)?,
        };
        Ok(Surface::Points(set))
    } else {
        let mesh = TriangleMesh::new(points, faces)?;
        Ok(Surface::Mesh(match normals {
            Some(n) => mesh.with_normals(n)?,
            None => mesh,
        }))
    }
}

/// Loads a PLY or OBJ file. `format` overrides extension sniffing; the PLY
/// encoding is read from the header either way.
pub fn load_surface(path: &Path, format: Option<SurfaceFormat>) -> Result<Surface> {
    let format = match format {
        Some(f) => f,
        None => SurfaceFormat::from_path(path)?,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        SurfaceFormat::Ply(_) => {
            let d = ply::parse_ply(&bytes)?;
            assemble(&d.vertices, d.normals.as_deref(), d.faces)
        }
        SurfaceFormat::Obj => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::parse(e.valid_up_to() as u64, "OBJ file is not UTF-8"))?;
            let d = obj::parse_obj(text)?;
            assemble(&d.vertices, d.normals.as_deref(), d.faces)
        }
    }
}

pub fn save_surface(path: &Path, surface: &Surface, format: Option<SurfaceFormat>) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => SurfaceFormat::from_path(path)?,
    };
    let (points, normals, faces) = match surface {
        Surface::Points(s) => (s.points(), s.normals(), &[][..]),
        Surface::Mesh(m) => (m.vertices(), m.normals(), m.triangles()),
    };
    let vertices: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let normals: Option<Vec<[f64; 3]>> = normals.map(|ns| ns.iter().map(|n| [n.x, n.y, n.z]).collect());
    let bytes = match format {
        SurfaceFormat::Ply(enc) => ply::write_ply(
            &ply::PlyData {
                vertices,
                normals,
                colors: None,
                faces: faces.to_vec(),
            },
            enc,
        ),
        SurfaceFormat::Obj => obj::write_obj(&obj::ObjData {
            vertices,
            normals,
            faces: faces.to_vec(),
        })
        .into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Convenience: load any supported surface and return it as a point set.
pub fn load_point_set(path: &Path) -> Result<SurfacePointSet> {
    load_surface(path, None)?.into_point_set()
}
