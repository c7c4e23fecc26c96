//! Minimal Wavefront OBJ subset: `v`, `vn` and `f` with 1-based indices in
//! the forms `f a b c` or `f a//na b//nb c//nc`. Polygons are fan-split.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjData {
    pub vertices: Vec<[f64; 3]>,
    /// Per-vertex normals, resolved through the `//n` references.
    pub normals: Option<Vec<[f64; 3]>>,
    pub faces: Vec<[u32; 3]>,
}

type FaceRecord = (u64, usize, Vec<(usize, Option<usize>)>);

pub fn parse_obj(text: &str) -> Result<ObjData> {
    let mut vertices = Vec::new();
    let mut vn: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<FaceRecord> = Vec::new();
    let mut offset = 0u64;
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        let tag = words.next().unwrap_or("");
        let rest: Vec<&str> = words.collect();
        let bad = |msg: String| Error::parse(at, format!("line {}: {msg}", line_no + 1));
        match tag {
            "v" | "vn" => {
                if rest.len() < 3 {
                    return Err(bad(format!("'{tag}' needs 3 coordinates")));
                }
                let mut c = [0.0; 3];
                for (slot, w) in c.iter_mut().zip(&rest) {
                    *slot = w.parse().map_err(|_| bad(format!("bad number '{w}'")))?;
                }
                if tag == "v" {
                    vertices.push(c);
                } else {
                    vn.push(c);
                }
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(bad("face needs at least 3 vertices".into()));
                }
                let mut refs = Vec::with_capacity(rest.len());
                for w in &rest {
                    let (v, n) = match w.split_once("//") {
                        Some((v, n)) => (v, Some(n)),
                        None if w.contains('/') => {
                            return Err(bad(format!("unsupported face reference '{w}'")))
                        }
                        None => (*w, None),
                    };
                    let v: usize = v.parse().map_err(|_| bad(format!("bad vertex index '{w}'")))?;
                    let n = n
                        .map(|n| n.parse::<usize>().map_err(|_| bad(format!("bad normal index '{w}'"))))
                        .transpose()?;
                    refs.push((v, n));
                }
                faces.push((at, faces.len(), refs));
            }
            "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            _ => return Err(bad(format!("unsupported statement '{tag}'"))),
        }
    }
    let nv = vertices.len();
    let mut normals: Option<Vec<[f64; 3]>> = None;
    let mut tris = Vec::new();
    for (at, row, refs) in faces {
        let mut idx = Vec::with_capacity(refs.len());
        for (v, n) in refs {
            if v == 0 || v > nv {
                return Err(Error::parse(
                    at,
                    format!("face {row}: vertex index {v} out of range (vertex count {nv})"),
                ));
            }
            if let Some(n) = n {
                if n == 0 || n > vn.len() {
                    return Err(Error::parse(
                        at,
                        format!("face {row}: normal index {n} out of range ({} normals)", vn.len()),
                    ));
                }
                normals.get_or_insert_with(|| vec![[0.0; 3]; nv])[v - 1] = vn[n - 1];
            }
            idx.push((v - 1) as u32);
        }
        for k in 1..idx.len() - 1 {
            tris.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    // Point clouds may pair `v` and `vn` one-to-one without faces.
    if tris.is_empty() && !vn.is_empty() && vn.len() == nv {
        normals = Some(vn);
    }
    Ok(ObjData {
        vertices,
        normals,
        faces: tris,
    })
}

pub fn write_obj(data: &ObjData) -> String {
    let mut s = String::new();
    for v in &data.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    if let Some(ns) = &data.normals {
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", n[0], n[1], n[2]);
        }
    }
    for f in &data.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if data.normals.is_some() {
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}
