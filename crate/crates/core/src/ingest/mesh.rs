use nalgebra::Unit;

use crate::error::{Error, Result};
use crate::geometry::{Point3, SurfacePointSet, UnitVector3, Vector3};

/// Indexed triangle mesh. Triangles wind counter-clockwise around their
/// outward normal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
    normals: Option<Vec<UnitVector3>>,
}

impl TriangleMesh {
    /// Validates indices and drops zero-area triangles.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((row, tri)) = triangles
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|&i| i as usize >= n))
        {
            return Err(Error::InvalidInput(format!(
                "triangle {row} references vertex {tri:?} but the mesh has {n} vertices"
            )));
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| triangle_area_vector(&vertices, t).norm_squared() > 0.0)
            .collect();
        Ok(Self {
            vertices,
            triangles,
            normals: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<UnitVector3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                expected: self.vertices.len(),
                found: normals.len(),
            });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> Option<&[UnitVector3]> {
        self.normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| 0.5 * triangle_area_vector(&self.vertices, t).norm())
            .sum()
    }

    /// Counts `(V, E, F)` with edges deduplicated; `V − E + F` is the Euler characteristic.
    pub fn euler_counts(&self) -> (usize, usize, usize) {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        (self.vertices.len(), edges.len(), self.triangles.len())
    }

    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges
            .chunk_by(|a, b| a == b)
            .all(|run| run.len() == 2)
    }
}

/// Twice the triangle area times its unit normal.
fn triangle_area_vector(v: &[Point3], t: &[u32; 3]) -> Vector3 {
    let a = v[t[0] as usize];
    let b = v[t[1] as usize];
    let c = v[t[2] as usize];
    (b - a).cross(&(c - a))
}

/// Mesh vertices with area-weighted vertex normals. Vertices no triangle
/// references fall back to `fallback`.
pub fn mesh_to_point_set(mesh: &TriangleMesh, fallback: Vector3) -> Result<SurfacePointSet> {
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyInput("mesh"));
    }
    let mut acc = vec![Vector3::zeros(); mesh.vertices.len()];
    for t in &mesh.triangles {
        let w = triangle_area_vector(&mesh.vertices, t);
        for &i in t {
            acc[i as usize] += w;
        }
    }
    let fallback = Unit::new_normalize(fallback);
    let normals = acc
        .into_iter()
        .map(|n| Unit::try_new(n, 1e-300).unwrap_or(fallback))
        .collect();
    SurfacePointSet::with_normals(mesh.vertices.clone(), normals)
}
