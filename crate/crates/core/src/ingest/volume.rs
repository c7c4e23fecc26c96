//! Scalar voxel volumes and the raw-plus-JSON-header file format.
//!
//! A volume named `head` is stored as `head.json` (header) next to
//! `head.raw` (payload). The payload is little-endian `int16` or `float32`,
//! x varying fastest, then y, then z.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3,
    values: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Point3, values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput(format!("volume dims {dims:?} must be >= 2 on every axis")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("volume spacing {spacing:?} must be positive")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("volume contains non-finite values".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            values,
        })
    }

    /// Samples `f` at every voxel centre `origin + (i·sx, j·sy, k·sz)`.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Point3,
        mut f: impl FnMut(&Point3) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = Point3::new(
                        origin.x + i as f64 * spacing[0],
                        origin.y + j as f64 * spacing[1],
                        origin.z + k as f64 * spacing[2],
                    );
                    values.push(f(&p));
                }
            }
        }
        Self::new(dims, spacing, origin, values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(
            self.origin.x + i as f64 * self.spacing[0],
            self.origin.y + j as f64 * self.spacing[1],
            self.origin.z + k as f64 * self.spacing[2],
        )
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trilinear interpolation at a world position; `None` outside the grid.
    pub fn sample_trilinear(&self, p: &Point3) -> Option<f64> {
        let g = [
            (p.x - self.origin.x) / self.spacing[0],
            (p.y - self.origin.y) / self.spacing[1],
            (p.z - self.origin.z) / self.spacing[2],
        ];
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            if !(g[a] >= -1e-9 && g[a] <= max + 1e-9) {
                return None;
            }
            let c = g[a].clamp(0.0, max);
            let b = (c.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = c - b as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3)
                .map(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            acc += w * self.value(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
        }
        Some(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeEncoding {
    Int16,
    Float32,
}

impl VolumeEncoding {
    fn width(self) -> usize {
        match self {
            VolumeEncoding::Int16 => 2,
            VolumeEncoding::Float32 => 4,
        }
    }
}

/// Sidecar header describing a raw volume payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub encoding: VolumeEncoding,
    /// Payload path, relative to the header's directory.
    pub data: String,
}

fn header_path_for(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<stem>.json` and `<stem>.raw`. Values are rounded for `int16`.
pub fn save_volume(path: &Path, volume: &ScalarVolume, encoding: VolumeEncoding) -> Result<()> {
    let header_path = header_path_for(path);
    let raw_path = path.with_extension("raw");
    let data = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad volume path {}", path.display())))?
        .to_string();
    let header = VolumeHeader {
        dims: volume.dims,
        spacing: volume.spacing,
        origin: [volume.origin.x, volume.origin.y, volume.origin.z],
        encoding,
        data,
    };
    let mut payload = Vec::with_capacity(volume.values.len() * encoding.width());
    for &v in &volume.values {
        match encoding {
            VolumeEncoding::Int16 => {
                let q = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                payload.extend_from_slice(&q.to_le_bytes());
            }
            VolumeEncoding::Float32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// Loads a volume from its JSON header (the `.json` or `.raw` path may be given).
pub fn load_volume(path: &Path) -> Result<ScalarVolume> {
    let header_path = header_path_for(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| {
        let offset = line_col_to_offset(&text, e.line(), e.column());
        Error::parse(offset, format!("volume header: {e}"))
    })?;
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.dims.iter().product::<usize>();
    let width = header.encoding.width();
    if bytes.len() < n * width {
        let whole = bytes.len() / width;
        return Err(Error::parse(
            (whole * width) as u64,
            format!(
                "truncated volume payload: expected {} bytes for {n} voxels, found {}",
                n * width,
                bytes.len()
            ),
        ));
    }
    let values = bytes[..n * width]
        .chunks_exact(width)
        .map(|c| match header.encoding {
            VolumeEncoding::Int16 => i16::from_le_bytes([c[0], c[1]]) as f64,
            VolumeEncoding::Float32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
        })
        .collect();
    ScalarVolume::new(header.dims, header.spacing, Point3::from(header.origin), values)
}

pub(crate) fn line_col_to_offset(text: &str, line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)) as u64;
        }
        offset += l.len();
    }
    offset as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ScalarVolume {
        ScalarVolume::from_fn([4, 3, 5], [0.5, 1.0, 2.0], Point3::new(-1.0, 0.0, 3.0), |p| {
            100.0 * p.x - 7.0 * p.y + p.z
        })
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(ScalarVolume::new([1, 2, 2], [1.0; 3], Point3::origin(), vec![0.0; 4]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0, 0.0, 1.0], Point3::origin(), vec![0.0; 8]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0; 3], Point3::origin(), vec![0.0; 7]).is_err());
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let v = ramp();
        let p = Point3::new(-0.3, 1.7, 8.1);
        let expect = 100.0 * p.x - 7.0 * p.y + p.z;
        assert!((v.sample_trilinear(&p).unwrap() - expect).abs() < 1e-9);
        assert!(v.sample_trilinear(&Point3::new(10.0, 0.0, 3.0)).is_none());
    }

    #[test]
    fn float32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.json");
        let v = ScalarVolume::from_fn([4, 3, 5], [0.5, 1.0, 2.0], Point3::origin(), |p| p.x + 0.25 * p.z).unwrap();
        save_volume(&path, &v, VolumeEncoding::Float32).unwrap();
        assert_eq!(load_volume(&path).unwrap(), v);
    }

    #[test]
    fn int16_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hu.json");
        let v = ScalarVolume::from_fn([3, 3, 3], [0.3; 3], Point3::origin(), |p| -1000.0 + 1000.0 * p.x).unwrap();
        save_volume(&path, &v, VolumeEncoding::Int16).unwrap();
        let back = load_volume(&path).unwrap();
        for (a, b) in back.values().iter().zip(v.values()) {
            assert_eq!(*a, b.round());
        }
        let raw = dir.path().join("hu.raw");
        let bytes = std::fs::read(&raw).unwrap();
        std::fs::write(&raw, &bytes[..bytes.len() - 3]).unwrap();
        match load_volume(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 50),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
