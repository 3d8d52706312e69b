//! Planar patch maps and plain-text map/cloud files.

use std::path::Path;

use nalgebra::Vector3;

use crate::RelocError;

/// Plane `n . p + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    n: Vector3<f64>,
    d: f64,
}

impl Patch {
    /// Normalizes `(n, d)` so that the normal has unit length.
    pub fn new(n: Vector3<f64>, d: f64) -> Result<Self, RelocError> {
        let len = n.norm();
        if !(len > 1e-12) || !len.is_finite() || !d.is_finite() {
            return Err(RelocError::InvalidPatch(format!("normal {n:?}, offset {d}")));
        }
        Ok(Self { n: n / len, d: d / len })
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.n
    }

    pub fn offset(&self) -> f64 {
        self.d
    }

    /// Signed distance of `p` from the plane.
    pub fn residual(&self, p: &Vector3<f64>) -> f64 {
        self.n.dot(p) + self.d
    }
}

/// Patch set with nearest-patch queries. Patches are unbounded planes, so the
/// query scans every patch; maps hold tens of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPatchMap {
    patches: Vec<Patch>,
}

impl PlanarPatchMap {
    pub fn new(patches: Vec<Patch>) -> Result<Self, RelocError> {
        if patches.is_empty() {
            return Err(RelocError::EmptyMap);
        }
        Ok(Self { patches })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Patch closest to `p` and the signed residual to it.
    pub fn nearest(&self, p: &Vector3<f64>) -> (usize, f64) {
        self.patches
            .iter()
            .enumerate()
            .map(|(j, patch)| (j, patch.residual(p)))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("maps are never empty")
    }

    /// Absolute distance of `p` to the closest patch.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.patches.iter().map(|patch| patch.residual(p).abs()).fold(f64::INFINITY, f64::min)
    }

    /// One `nx ny nz d` line per patch.
    pub fn to_text(&self) -> String {
        self.patches
            .iter()
            .map(|p| format!("{:+.17e} {:+.17e} {:+.17e} {:+.17e}\n", p.n.x, p.n.y, p.n.z, p.d))
            .collect()
    }
}

fn numbers(text: &str, name: &str, width: usize) -> Result<Vec<Vec<f64>>, RelocError> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| RelocError::Parse {
            source_name: name.to_string(),
            line: k + 1,
            msg,
        };
        let row = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("`{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != width {
            return Err(err(format!("expected {width} numbers, found {}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_map(text: &str, name: &str) -> Result<PlanarPatchMap, RelocError> {
    let patches = numbers(text, name, 4)?
        .into_iter()
        .map(|r| Patch::new(Vector3::new(r[0], r[1], r[2]), r[3]))
        .collect::<Result<Vec<_>, _>>()?;
    PlanarPatchMap::new(patches)
}

pub fn parse_cloud(text: &str, name: &str) -> Result<Vec<Vector3<f64>>, RelocError> {
    let pts: Vec<Vector3<f64>> = numbers(text, name, 3)?.into_iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect();
    if pts.is_empty() {
        return Err(RelocError::EmptyCloud);
    }
    Ok(pts)
}

pub fn read_map(path: &Path) -> Result<PlanarPatchMap, RelocError> {
    parse_map(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn read_cloud(path: &Path) -> Result<Vec<Vector3<f64>>, RelocError> {
    parse_cloud(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn cloud_text(points: &[Vector3<f64>]) -> String {
    points.iter().map(|p| format!("{:+.17e} {:+.17e} {:+.17e}\n", p.x, p.y, p.z)).collect()
}
