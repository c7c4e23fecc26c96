//! Landmark and surface error measures.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfacePointSet;
use crate::ingest::ply::{write_ply, PlyData, PlyEncoding};
use crate::lift::LandmarkSet3D;
use crate::spatial::KdTree;

/// One-sided distances from a source set into a target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceErrorReport {
    pub e_sup: f64,
    pub e_mean: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub distances: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub signed: Option<Vec<f64>>,
}

impl SurfaceErrorReport {
    /// Drops the per-point lists, keeping only the summary.
    pub fn summary(&self) -> Self {
        Self {
            e_sup: self.e_sup,
            e_mean: self.e_mean,
            distances: Vec::new(),
            signed: None,
        }
    }
}

/// RMS of per-landmark distances over identical index sets.
pub fn point_error(a: &LandmarkSet3D, b: &LandmarkSet3D) -> Result<f64> {
    let (ia, ib) = (a.indices(), b.indices());
    if ia != ib {
        let mut missing: Vec<u32> = ia
            .iter()
            .filter(|i| !ib.contains(i))
            .chain(ib.iter().filter(|i| !ia.contains(i)))
            .copied()
            .collect();
        missing.sort_unstable();
        return Err(Error::IndexMismatch { missing });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("landmark set"));
    }
    let sum: f64 = a
        .landmarks()
        .iter()
        .zip(b.landmarks())
        .map(|(p, q)| (p.position() - q.position()).norm_squared())
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

pub(crate) fn nearest_distances(x: &SurfacePointSet, tree: &KdTree) -> Vec<(usize, f64)> {
    x.points()
        .par_iter()
        .map(|p| {
            let (j, d2) = tree.nearest(p).expect("non-empty tree");
            (j, d2.sqrt())
        })
        .collect()
}

/// Per-point nearest distance from `x` into `y`, with sup and mean.
pub fn surface_error(x: &SurfacePointSet, y: &SurfacePointSet) -> Result<SurfaceErrorReport> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("surface for error measurement"));
    }
    let tree = KdTree::build(y.points());
    let distances: Vec<f64> = nearest_distances(x, &tree).into_iter().map(|(_, d)| d).collect();
    Ok(summarise(distances))
}

pub(crate) fn summarise(distances: Vec<f64>) -> SurfaceErrorReport {
    let e_sup = distances.iter().copied().fold(0.0, f64::max);
    let e_mean = distances.iter().sum::<f64>() / distances.len() as f64;
    SurfaceErrorReport {
        e_sup,
        e_mean,
        distances,
        signed: None,
    }
}

/// For each point of `y`, the distance to its nearest point `x*` in `x`,
/// signed by `(x* − y)·n(y)`. A zero dot product counts as positive.
pub fn signed_distance(y: &SurfacePointSet, x: &SurfacePointSet) -> Result<Vec<f64>> {
    let normals = y.normals().ok_or(Error::MissingNormals)?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("surface for signed distance"));
    }
    let tree = KdTree::build(x.points());
    Ok(y.points()
        .par_iter()
        .zip(normals.par_iter())
        .map(|(p, n)| {
            let (j, d2) = tree.nearest(p).expect("non-empty tree");
            let dot = (x.points()[j] - p).dot(n.as_ref());
            let d = d2.sqrt();
            if dot < 0.0 {
                -d
            } else {
                d
            }
        })
        .collect())
}

/// Diverging colormap: white at 0, red at `+range`, blue at `−range`.
pub fn diverging_color(d: f64, range: f64) -> [u8; 3] {
    let t = (d / range).clamp(-1.0, 1.0);
    let fade = |v: f64| (255.0 * v).round() as u8;
    if t >= 0.0 {
        [255, fade(1.0 - t), fade(1.0 - t)]
    } else {
        [fade(1.0 + t), fade(1.0 + t), 255]
    }
}

/// Writes `y` as a binary PLY with one colour per vertex from `d`.
pub fn export_distance_colormap(y: &SurfacePointSet, d: &[f64], range: f64, path: &Path) -> Result<()> {
    if d.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            found: d.len(),
        });
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidInput(format!("colormap range {range} must be positive")));
    }
    let data = PlyData {
        vertices: y.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
        normals: y.normals().map(|ns| ns.iter().map(|n| [n.x, n.y, n.z]).collect()),
        colors: Some(d.iter().map(|&v| diverging_color(v, range)).collect()),
        faces: Vec::new(),
    };
    fs::write(path, write_ply(&data, PlyEncoding::BinaryLittleEndian)).map_err(|e| Error::io(path, e))
}
