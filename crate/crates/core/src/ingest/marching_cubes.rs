//! Classic marching cubes over a [`ScalarVolume`].
//!
//! The 256-case triangle table is derived once from the cube topology rather
//! than transcribed: on every cube face the iso-contour isolates the corners
//! above the threshold (no asymptotic decider), face contours are chained into
//! closed polygons and each polygon is fan-triangulated. Because the face rule
//! only looks at that face's four corners, neighbouring cells always agree and
//! the extracted surface is watertight wherever the level set stays inside the
//! grid.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::ingest::mesh::TriangleMesh;
use crate::ingest::volume::ScalarVolume;

/// Cube corner offsets, Lorensen–Cline / Bourke numbering.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each of the 12 cube edges.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Cube faces with corners listed counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

/// Which surface side normals point toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// From the above-threshold region toward the below-threshold region.
    #[default]
    TowardBelow,
    TowardAbove,
}

pub struct CaseTable {
    /// Bit `e` set when edge `e` crosses the level set.
    pub edge_mask: [u16; 256],
    /// Triangles as edge-index triples.
    pub triangles: Vec<Vec<[u8; 3]>>,
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("face corners are adjacent")
}

fn build_case(case: usize) -> (u16, Vec<[u8; 3]>) {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut mask = 0u16;
    for (e, [a, b]) in EDGES.iter().enumerate() {
        if inside(*a) != inside(*b) {
            mask |= 1 << e;
        }
    }
    // next[e] = the edge reached from crossing `e` by following the contour
    // across the one face where `e` is entered.
    let mut next = [usize::MAX; 12];
    for face in FACES {
        let mut cuts = Vec::with_capacity(4);
        for i in 0..4 {
            let (a, b) = (face[i], face[(i + 1) % 4]);
            if inside(a) != inside(b) {
                cuts.push((edge_between(a, b), !inside(a)));
            }
        }
        for (i, &(edge, entering)) in cuts.iter().enumerate() {
            if !entering {
                continue;
            }
            let exit = (1..cuts.len())
                .map(|k| cuts[(i + k) % cuts.len()])
                .find(|&(_, entering)| !entering)
                .expect("every entry has a matching exit");
            next[edge] = exit.0;
        }
    }
    let mut visited = 0u16;
    let mut tris = Vec::new();
    for start in 0..12 {
        if mask & (1 << start) == 0 || visited & (1 << start) != 0 {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        loop {
            visited |= 1 << e;
            poly.push(e as u8);
            e = next[e];
            if e == start {
                break;
            }
        }
        for k in 1..poly.len() - 1 {
            tris.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    (mask, tris)
}

/// The shared 256-case table.
pub fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut edge_mask = [0u16; 256];
        let mut triangles = Vec::with_capacity(256);
        for (case, slot) in edge_mask.iter_mut().enumerate() {
            let (m, t) = build_case(case);
            *slot = m;
            triangles.push(t);
        }
        CaseTable {
            edge_mask,
            triangles,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Edge(usize, usize),
    Corner(usize),
}

/// Extracts the level set `{value = threshold}` as a triangle mesh.
///
/// Vertices are linearly interpolated along cell edges and emitted in
/// z-slab-major order, so the output is deterministic.
pub fn extract_isosurface(
    volume: &ScalarVolume,
    threshold: f64,
    orientation: Orientation,
) -> Result<TriangleMesh> {
    let (min, max) = volume.value_range();
    if min == max {
        return Err(Error::EmptyLevelSet);
    }
    if !(threshold > min && threshold < max) {
        return Err(Error::ThresholdOutOfRange { threshold, min, max });
    }
    let table = case_table();
    let [nx, ny, nz] = volume.dims();
    let mut vertices: Vec<Point3> = Vec::new();
    let mut lookup: HashMap<VertexKey, u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0usize;
                let mut ids = [0usize; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    let id = volume.index(i + off[0], j + off[1], k + off[2]);
                    ids[c] = id;
                    if volume.values()[id] > threshold {
                        case |= 1 << c;
                    }
                }
                let tris = &table.triangles[case];
                if tris.is_empty() {
                    continue;
                }
                let mut edge_vertex = [u32::MAX; 12];
                for tri in tris {
                    let mut out = [0u32; 3];
                    for (slot, &edge) in out.iter_mut().zip(tri) {
                        let edge = edge as usize;
                        if edge_vertex[edge] == u32::MAX {
                            let [ca, cb] = EDGES[edge];
                            edge_vertex[edge] = vertex_on_edge(
                                volume,
                                threshold,
                                (ids[ca], [i + CORNERS[ca][0], j + CORNERS[ca][1], k + CORNERS[ca][2]]),
                                (ids[cb], [i + CORNERS[cb][0], j + CORNERS[cb][1], k + CORNERS[cb][2]]),
                                &mut vertices,
                                &mut lookup,
                            );
                        }
                        *slot = edge_vertex[edge];
                    }
                    if out[0] == out[1] || out[1] == out[2] || out[0] == out[2] {
                        continue;
                    }
                    triangles.push(match orientation {
                        Orientation::TowardBelow => out,
                        Orientation::TowardAbove => [out[0], out[2], out[1]],
                    });
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    let mesh = TriangleMesh::new(vertices, triangles)?;
    if mesh.triangles().is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    Ok(mesh)
}

fn vertex_on_edge(
    volume: &ScalarVolume,
    threshold: f64,
    (ia, ga): (usize, [usize; 3]),
    (ib, gb): (usize, [usize; 3]),
    vertices: &mut Vec<Point3>,
    lookup: &mut HashMap<VertexKey, u32>,
) -> u32 {
    let va = volume.values()[ia];
    let vb = volume.values()[ib];
    let t = (threshold - va) / (vb - va);
    let key = if t <= 0.0 {
        VertexKey::Corner(ia)
    } else if t >= 1.0 {
        VertexKey::Corner(ib)
    } else {
        VertexKey::Edge(ia.min(ib), ia.max(ib))
    };
    *lookup.entry(key).or_insert_with(|| {
        let pa = volume.position(ga[0], ga[1], ga[2]);
        let pb = volume.position(gb[0], gb[1], gb[2]);
        let p = match key {
            VertexKey::Corner(c) if c == ia => pa,
            VertexKey::Corner(_) => pb,
            VertexKey::Edge(..) => pa + (pb - pa) * t,
        };
        vertices.push(p);
        (vertices.len() - 1) as u32
    })
}
