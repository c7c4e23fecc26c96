//! PLY reader/writer (ASCII and binary little-endian).
//!
//! Reads any element layout, keeping `vertex` (`x y z`, optional `nx ny nz`
//! and `red green blue`) and `face` (`vertex_indices` list). Unknown
//! elements and properties are skipped. Writes vertices as `double` so
//! coordinates survive a round trip bit-for-bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Contents of a PLY file as far as this crate cares.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub faces: Vec<[u32; 3]>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(offset as u64, "unterminated PLY header (missing end_header)"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::parse(offset as u64, "PLY header is not UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        lines.push((offset, line.clone()));
        offset += nl + 1;
        if line.trim() == "end_header" {
            break;
        }
    }
    let mut iter = lines.into_iter();
    match iter.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(0, "missing 'ply' magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (at, line) in iter {
        let words: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::parse(at as u64, format!("{msg}: '{line}'"));
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    _ => return Err(bad("unsupported PLY format")),
                });
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let count = Scalar::parse(count).ok_or_else(|| bad("unknown list count type"))?;
                let item = Scalar::parse(item).ok_or_else(|| bad("unknown list item type"))?;
                if !count.is_integer() {
                    return Err(bad("list count type must be an integer"));
                }
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad("unknown property type"))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(ty),
                });
            }
            _ => return Err(bad("malformed header line")),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(0, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
    })
}

/// Pulls values from the body in either encoding, tracking the byte offset.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: PlyEncoding,
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            PlyEncoding::BinaryLittleEndian => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(Error::parse(self.pos as u64, "truncated PLY payload"));
                }
                let v = ty.decode(&self.bytes[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
            PlyEncoding::Ascii => {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                let start = self.pos;
                while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(Error::parse(start as u64, "truncated PLY payload"));
                }
                let tok = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(start as u64, format!("bad number '{tok}'")))
            }
        }
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_header(bytes)?;
    let mut body = Body {
        bytes,
        pos: header.body_offset,
        encoding: header.encoding,
    };
    let mut data = PlyData::default();
    let mut vertex_count = None;
    for el in &header.elements {
        let find = |n: &str| el.properties.iter().position(|p| p.name == n);
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz = [find("x"), find("y"), find("z")];
        let nxyz = [find("nx"), find("ny"), find("nz")];
        let rgb = [find("red"), find("green"), find("blue")];
        let has_normals = is_vertex && nxyz.iter().all(Option::is_some);
        let has_colors = is_vertex && rgb.iter().all(Option::is_some);
        if is_vertex {
            if xyz.iter().any(Option::is_none) {
                return Err(Error::parse(0, "vertex element lacks x/y/z"));
            }
            vertex_count = Some(el.count);
            data.vertices.reserve(el.count);
            if has_normals {
                data.normals = Some(Vec::with_capacity(el.count));
            }
            if has_colors {
                data.colors = Some(Vec::with_capacity(el.count));
            }
        }
        let index_prop = find("vertex_indices").or_else(|| find("vertex_index"));
        let mut scalars = vec![0.0; el.properties.len()];
        for row in 0..el.count {
            let row_start = body.pos;
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop.kind {
                    PropertyKind::Scalar(ty) => scalars[pi] = body.next(ty)?,
                    PropertyKind::List { count, item } => {
                        let n = body.next(count)?;
                        if !(n >= 0.0) {
                            return Err(Error::parse(row_start as u64, format!("{} {row}: negative list length", el.name)));
                        }
                        let n = n as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(body.next(item)?);
                        }
                        if is_face && Some(pi) == index_prop {
                            let nv = vertex_count.ok_or_else(|| {
                                Error::parse(row_start as u64, "face element precedes vertex element")
                            })?;
                            if n < 3 {
                                return Err(Error::parse(row_start as u64, format!("face {row} has {n} indices")));
                            }
                            let mut idx = Vec::with_capacity(n);
                            for &v in &items {
                                if !(v >= 0.0) || v as usize >= nv || v.fract() != 0.0 {
                                    return Err(Error::parse(
                                        row_start as u64,
                                        format!("face {row}: vertex index {v} out of range (vertex count {nv})"),
                                    ));
                                }
                                idx.push(v as u32);
                            }
                            for k in 1..n - 1 {
                                data.faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                let get = |i: Option<usize>| scalars[i.expect("checked")];
                data.vertices.push([get(xyz[0]), get(xyz[1]), get(xyz[2])]);
                if let Some(ns) = data.normals.as_mut() {
                    ns.push([get(nxyz[0]), get(nxyz[1]), get(nxyz[2])]);
                }
                if let Some(cs) = data.colors.as_mut() {
                    cs.push([get(rgb[0]) as u8, get(rgb[1]) as u8, get(rgb[2]) as u8]);
                }
            }
        }
    }
    Ok(data)
}

pub fn write_ply(data: &PlyData, encoding: PlyEncoding) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", data.vertices.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(header, "property double {p}");
    }
    if data.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            let _ = writeln!(header, "property double {p}");
        }
    }
    if data.colors.is_some() {
        for p in ["red", "green", "blue"] {
            let _ = writeln!(header, "property uchar {p}");
        }
    }
    if !data.faces.is_empty() {
        let _ = writeln!(header, "element face {}", data.faces.len());
        header.push_str("property list uchar int vertex_indices\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut s = String::new();
            for (i, v) in data.vertices.iter().enumerate() {
                let _ = write!(s, "{} {} {}", v[0], v[1], v[2]);
                if let Some(n) = data.normals.as_ref().map(|ns| ns[i]) {
                    let _ = write!(s, " {} {} {}", n[0], n[1], n[2]);
                }
                if let Some(c) = data.colors.as_ref().map(|cs| cs[i]) {
                    let _ = write!(s, " {} {} {}", c[0], c[1], c[2]);
                }
                s.push('\n');
            }
            for f in &data.faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, v) in data.vertices.iter().enumerate() {
                for c in v {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(n) = data.normals.as_ref().map(|ns| ns[i]) {
                    for c in n {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                if let Some(c) = data.colors.as_ref().map(|cs| cs[i]) {
                    out.extend_from_slice(&c);
                }
            }
            for f in &data.faces {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}
